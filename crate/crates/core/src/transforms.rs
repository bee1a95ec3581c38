//! Rotation, rigid and similarity transforms, plus the registration and
//! canonicalization steps that carry per-view point maps into the robot frame.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::PointMap;
use crate::error::{Error, Result};

/// Orthonormality / determinant tolerance for [`Rotation`].
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormal columns and `det = +1`, both within [`ROTATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("rotation has non-finite entries".into()));
        }
        let gram_err = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det_err = (m.determinant() - 1.0).abs();
        if gram_err > ROTATION_TOL || det_err > ROTATION_TOL {
            return Err(Error::InvalidInput(format!(
                "not a rotation (orthonormality error {gram_err:e}, det error {det_err:e})"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Rodrigues' formula for the rotation vector `omega` (axis × angle).
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta = omega.norm();
        if theta == 0.0 {
            return Self::identity();
        }
        let k = skew(&(omega / theta));
        Self(Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()))
    }

    pub fn about_axis(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }

    pub fn is_valid(&self) -> bool {
        Self::from_matrix(self.0).is_ok()
    }
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Geodesic distance between two rotations, the angle of `aᵀ b`, in `[0, π]`.
///
/// Evaluated as `atan2(|axial(M)|, (tr M - 1) / 2)`; equivalent to the
/// clamped arccos form but exact at zero and well-conditioned near it.
pub fn rotation_angle(a: &Rotation, b: &Rotation) -> f64 {
    let (a, b) = (a.matrix(), b.matrix());
    // explicit product keeps aᵀa exactly symmetric
    let mut m = [[0.0f64; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = a[(0, i)] * b[(0, j)] + a[(1, i)] * b[(1, j)] + a[(2, i)] * b[(2, j)];
        }
    }
    let axial = Vector3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
    let sin = 0.5 * axial.norm();
    let cos = ((m[0][0] + m[1][1] + m[2][2] - 1.0) * 0.5).clamp(-1.0, 1.0);
    sin.atan2(cos)
}

/// Unconstrained 9-number rotation output, reshaped row-major into 3×3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NineD(pub [f64; 9]);

impl NineD {
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let mut raw = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                raw[3 * r + c] = m[(r, c)];
            }
        }
        Self(raw)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.0)
    }
}

/// Nearest rotation in Frobenius norm: `U · diag(1, 1, det(U Vᵀ)) · Vᵀ`, with
/// the sign correction placed on the smallest singular direction.
pub fn orthogonalize_9d(raw: &NineD) -> Result<Rotation> {
    let m = raw.matrix();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("9D rotation has non-finite entries".into()));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let sv = svd.singular_values;
    let max = sv.max();
    let zeros = sv.iter().filter(|s| **s <= max * 1e-14).count();
    if max == 0.0 || zeros >= 2 {
        return Err(Error::Degenerate(format!(
            "9D rotation is rank-deficient (singular values {:e}, {:e}, {:e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let smallest = sv.imin();
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d[smallest] = -1.0;
    }
    Ok(Rotation(u * Matrix3::from_diagonal(&d) * v_t))
}

/// Group operations shared by rigid and similarity transforms.
pub trait Transform3: Sized {
    fn identity() -> Self;
    /// `self ∘ other`: apply `other` first.
    fn compose(&self, other: &Self) -> Self;
    fn inverse(&self) -> Self;
    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64>;
}

pub fn compose<T: Transform3>(a: &T, b: &T) -> T {
    a.compose(b)
}

pub fn invert<T: Transform3>(a: &T) -> T {
    a.inverse()
}

/// `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseMatrix", try_from = "PoseMatrix")]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidInput(format!(
                "rigid transform bottom row must be [0, 0, 0, 1], got {bottom:?}"
            )));
        }
        let rotation = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("translation has non-finite entries".into()));
        }
        Ok(Self::new(rotation, translation))
    }
}

impl Transform3 for RigidTransform {
    fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation.compose(&other.rotation),
            self.rotation.apply(&other.translation) + self.translation,
        )
    }

    fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(r_inv, -r_inv.apply(&self.translation))
    }

    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }
}

/// `p ↦ s · (R p + t)`, i.e. `S = s · T` acting on homogeneous points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SimilarityRepr")]
pub struct Similarity {
    pub scale: f64,
    pub rigid: RigidTransform,
}

impl Similarity {
    pub fn new(scale: f64, rigid: RigidTransform) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "similarity scale must be positive, got {scale}"
            )));
        }
        Ok(Self { scale, rigid })
    }

    pub fn from_rigid(rigid: RigidTransform) -> Self {
        Self { scale: 1.0, rigid }
    }

    /// The full 4×4 matrix `s · T`; its last row is `[0, 0, 0, s]`.
    pub fn to_matrix4(&self) -> Matrix4<f64> {
        self.rigid.to_matrix4() * self.scale
    }
}

impl Transform3 for Similarity {
    fn identity() -> Self {
        Self::from_rigid(RigidTransform::identity())
    }

    fn compose(&self, other: &Self) -> Self {
        let rigid = RigidTransform::new(
            self.rigid.rotation.compose(&other.rigid.rotation),
            self.rigid.rotation.apply(&other.rigid.translation) + self.rigid.translation / other.scale,
        );
        Self {
            scale: self.scale * other.scale,
            rigid,
        }
    }

    fn inverse(&self) -> Self {
        let r_inv = self.rigid.rotation.inverse();
        Self {
            scale: 1.0 / self.scale,
            rigid: RigidTransform::new(r_inv, -r_inv.apply(&self.rigid.translation) * self.scale),
        }
    }

    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rigid.apply(p) * self.scale
    }
}

#[derive(Deserialize)]
struct SimilarityRepr {
    scale: f64,
    rigid: RigidTransform,
}

impl TryFrom<SimilarityRepr> for Similarity {
    type Error = Error;

    fn try_from(r: SimilarityRepr) -> Result<Self> {
        Similarity::new(r.scale, r.rigid)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct PoseMatrix([[f64; 4]; 4]);

impl From<RigidTransform> for PoseMatrix {
    fn from(t: RigidTransform) -> Self {
        let m = t.to_matrix4();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        PoseMatrix(rows)
    }
}

impl TryFrom<PoseMatrix> for RigidTransform {
    type Error = Error;

    fn try_from(p: PoseMatrix) -> Result<Self> {
        let flat: Vec<f64> = p.0.iter().flatten().copied().collect();
        RigidTransform::from_matrix4(&Matrix4::from_row_slice(&flat))
    }
}

/// Pose of view `j` expressed in the frame of view `i`, for camera-to-world
/// poses: `R = Rᵢ⁻¹ Rⱼ`, `t = Rᵢ⁻¹ (tⱼ − tᵢ)`.
pub fn relative_pose(pose_i: &RigidTransform, pose_j: &RigidTransform) -> RigidTransform {
    let r_inv = pose_i.rotation.inverse();
    RigidTransform::new(
        r_inv.compose(&pose_j.rotation),
        r_inv.apply(&(pose_j.translation - pose_i.translation)),
    )
}

/// Carries each view's local points into the common frame with its relative pose.
pub fn register_views(locals: &[PointMap], rels: &[RigidTransform]) -> Result<Vec<PointMap>> {
    if locals.len() != rels.len() {
        return Err(Error::dims(
            format!("{} relative poses", locals.len()),
            format!("{}", rels.len()),
        ));
    }
    Ok(locals
        .iter()
        .zip(rels)
        .map(|(points, rel)| points.map_points(|p| rel.apply(p)))
        .collect())
}

pub fn to_canonical(points: &[PointMap], sim: &Similarity) -> Vec<PointMap> {
    points.iter().map(|view| view.map_points(|p| sim.apply(p))).collect()
}
