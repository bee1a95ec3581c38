//! Keypoint decoding and camera extrinsic recovery.
//!
//! Heatmaps are decoded to sub-pixel keypoints with a soft-argmax; the robot
//! keypoints placed by forward kinematics and their decoded pixels then give
//! the base-to-camera extrinsic through a linear initialization followed by
//! Gauss-Newton refinement of the reprojection error on SE(3).

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{project, Intrinsics};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::transforms::{orthogonalize_9d, NineD, RigidTransform, Rotation, Similarity, Transform3};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// H×W×N_kp keypoint scores, one grid per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    channels: Vec<Grid<f64>>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, channels: Vec<Grid<f64>>) -> Result<Self> {
        for (k, ch) in channels.iter().enumerate() {
            if ch.shape() != (height, width) {
                return Err(Error::dims(
                    format!("{height}x{width} heatmap channel"),
                    format!("channel {k} of {}x{}", ch.height(), ch.width()),
                ));
            }
            if ch.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "heatmap channel {k} has negative or non-finite scores"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_keypoints(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, k: usize) -> &Grid<f64> {
        &self.channels[k]
    }

    pub fn channels(&self) -> &[Grid<f64>] {
        &self.channels
    }

    /// Isotropic bumps `peak · exp(-r² / 2σ²)` centered on each keypoint.
    pub fn gaussian(height: usize, width: usize, centers: &Keypoints2D, sigma: f64, peak: f64) -> Self {
        let channels = centers
            .0
            .iter()
            .map(|c| {
                Grid::from_fn(height, width, |v, u| {
                    let d2 = (u as f64 - c.x).powi(2) + (v as f64 - c.y).powi(2);
                    peak * (-d2 / (2.0 * sigma * sigma)).exp()
                })
            })
            .collect();
        Self {
            height,
            width,
            channels,
        }
    }
}

/// Sub-pixel keypoint positions `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Keypoints2D(pub Vec<Vector2<f64>>);

impl Keypoints2D {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per channel, the expected pixel position under `softmax(scores / temperature)`.
pub fn soft_argmax(heatmap: &Heatmap, temperature: f64) -> Result<Keypoints2D> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "soft-argmax temperature must be positive, got {temperature}"
        )));
    }
    heatmap
        .channels
        .iter()
        .enumerate()
        .map(|(k, ch)| {
            let max = ch.iter().copied().fold(0.0, f64::max);
            if max == 0.0 {
                return Err(Error::InvalidInput(format!("heatmap channel {k} is all zero")));
            }
            // unnormalized weights; a flat channel gives weight exactly 1 per pixel
            let (mut sum_w, mut sum_u, mut sum_v) = (0.0, 0.0, 0.0);
            for v in 0..heatmap.height {
                for u in 0..heatmap.width {
                    let w = ((ch.get(v, u) - max) / temperature).exp();
                    sum_w += w;
                    sum_u += w * u as f64;
                    sum_v += w * v as f64;
                }
            }
            Ok(Vector2::new(sum_u / sum_w, sum_v / sum_w))
        })
        .collect::<Result<Vec<_>>>()
        .map(Keypoints2D)
}

/// Soft-argmax after dividing each channel by its maximum, which makes the
/// result independent of the channel's overall amplitude.
pub fn soft_argmax_max_normalized(heatmap: &Heatmap, temperature: f64) -> Result<Keypoints2D> {
    let channels = heatmap
        .channels
        .iter()
        .map(|ch| {
            let max = ch.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                ch.map(|s| s / max)
            } else {
                ch.clone()
            }
        })
        .collect();
    soft_argmax(
        &Heatmap {
            channels,
            ..heatmap.clone()
        },
        temperature,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpOptions {
    pub max_iterations: usize,
    /// Converged once the accepted step norm drops below this.
    pub step_tolerance: f64,
    pub max_halvings: usize,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpSolution {
    /// Base frame to camera frame.
    pub extrinsic: RigidTransform,
    /// Mean pixel distance at the solution.
    pub reprojection_error: f64,
    pub iterations: usize,
}

pub fn solve_pnp(points3d: &[Vector3<f64>], pixels: &Keypoints2D, k: &Intrinsics) -> Result<PnpSolution> {
    solve_pnp_with(points3d, pixels, k, &PnpOptions::default())
}

pub fn solve_pnp_with(
    points3d: &[Vector3<f64>],
    pixels: &Keypoints2D,
    k: &Intrinsics,
    opts: &PnpOptions,
) -> Result<PnpSolution> {
    if points3d.len() != pixels.len() {
        return Err(Error::dims(format!("{} pixels", points3d.len()), pixels.len()));
    }
    if points3d.len() < 4 {
        return Err(Error::Degenerate(format!(
            "PnP needs at least 4 points, got {}",
            points3d.len()
        )));
    }
    if points3d.iter().any(|p| p.iter().any(|v| !v.is_finite()))
        || pixels.0.iter().any(|p| p.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidInput("PnP inputs must be finite".into()));
    }
    k.validate()?;

    let shape = PointSpread::new(points3d);
    if shape.collinear() {
        return Err(Error::Degenerate("PnP points are collinear".into()));
    }
    let normalized: Vec<Vector2<f64>> = pixels.0.iter().map(|p| k.normalize(p.x, p.y)).collect();

    let mut inits = Vec::with_capacity(2);
    if points3d.len() >= 6 && !shape.nearly_planar() {
        inits.extend(dlt_init(points3d, &normalized, &shape));
    }
    inits.extend(homography_init(points3d, &normalized, &shape));
    if inits.is_empty() {
        return Err(Error::Degenerate("no linear initialization available".into()));
    }

    let mut best: Option<(f64, PnpSolution)> = None;
    let mut last_err = None;
    for init in inits {
        match gauss_newton(points3d, pixels, k, init, opts) {
            Ok((cost, sol)) => {
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, sol));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((_, sol)), _) => Ok(sol),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one initialization was tried"),
    }
}

/// Centroid and principal axes of the 3D points.
struct PointSpread {
    centroid: Vector3<f64>,
    /// Principal directions, most to least spread, as a right-handed basis.
    axes: Matrix3<f64>,
    spread: Vector3<f64>,
}

impl PointSpread {
    fn new(points: &[Vector3<f64>]) -> Self {
        let n = points.len() as f64;
        let centroid = points.iter().sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - centroid;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let mut order = [0, 1, 2];
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let e1 = eig.eigenvectors.column(order[0]).into_owned();
        let e2 = eig.eigenvectors.column(order[1]).into_owned();
        let axes = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
        let spread = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]].max(0.0).sqrt());
        Self { centroid, axes, spread }
    }

    fn collinear(&self) -> bool {
        self.spread[0] == 0.0 || self.spread[1] <= 1e-9 * self.spread[0]
    }

    fn nearly_planar(&self) -> bool {
        self.spread[2] <= 1e-3 * self.spread[0]
    }
}

/// Right singular vector of the smallest singular value (the least-squares
/// null vector), padding wide systems so the full basis is available.
fn null_vector(a: DMatrix<f64>) -> Vec<f64> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (a.nrows(), cols)).copy_from(&a);
        padded
    } else {
        a
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested Vᵀ");
    let i = svd.singular_values.imin();
    v_t.row(i).iter().copied().collect()
}

/// Calibrated DLT on normalized image coordinates: solve for the 3×4 `[R|t]`
/// up to scale, then project its left block onto SO(3).
fn dlt_init(points: &[Vector3<f64>], xs: &[Vector2<f64>], shape: &PointSpread) -> Option<RigidTransform> {
    let n = points.len();
    let c = shape.centroid;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n as f64;
    let sigma = 3f64.sqrt() / mean_dist;
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (p, x)) in points.iter().zip(xs).enumerate() {
        let q = (p - c) * sigma;
        let h = [q.x, q.y, q.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -x.x * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -x.y * h[j];
        }
    }
    let v = null_vector(a);
    // undo the point normalization: P = P' · [σI, -σc; 0, 1]
    let mut m = Matrix3::from_row_slice(&[v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]]) * sigma;
    let mut p4 = Vector3::new(v[3], v[7], v[11]) - m * c;
    if (m * c + p4).z < 0.0 {
        m = -m;
        p4 = -p4;
    }
    let scale = m.svd(false, false).singular_values.sum() / 3.0;
    if !(scale > 0.0) {
        return None;
    }
    let rotation = orthogonalize_9d(&NineD::from_matrix(&m)).ok()?;
    Some(RigidTransform::new(rotation, p4 / scale))
}

/// Plane-induced homography on the best-fit plane of the points, decomposed
/// into a pose. Exact for coplanar points, approximate otherwise.
fn homography_init(points: &[Vector3<f64>], xs: &[Vector2<f64>], shape: &PointSpread) -> Option<RigidTransform> {
    let n = points.len();
    let basis = shape.axes;
    let plane: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let d = basis.transpose() * (p - shape.centroid);
            Vector2::new(d.x, d.y)
        })
        .collect();
    let mean_dist = plane.iter().map(|q| q.norm()).sum::<f64>() / n as f64;
    let sigma = 2f64.sqrt() / mean_dist;
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, (q, x)) in plane.iter().zip(xs).enumerate() {
        let h = [q.x * sigma, q.y * sigma, 1.0];
        for j in 0..3 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 6 + j)] = -x.x * h[j];
            a[(2 * i + 1, 3 + j)] = h[j];
            a[(2 * i + 1, 6 + j)] = -x.y * h[j];
        }
    }
    let v = null_vector(a);
    let hm = Matrix3::from_row_slice(&v) * Matrix3::from_diagonal(&Vector3::new(sigma, sigma, 1.0));
    let (h1, h2, h3) = (
        hm.column(0).into_owned(),
        hm.column(1).into_owned(),
        hm.column(2).into_owned(),
    );
    let norm = 0.5 * (h1.norm() + h2.norm());
    if !(norm > 0.0) {
        return None;
    }
    let mut lambda = 1.0 / norm;
    if (h3 * lambda).z < 0.0 {
        lambda = -lambda;
    }
    let (r1, r2, t_plane) = (h1 * lambda, h2 * lambda, h3 * lambda);
    let r_plane = orthogonalize_9d(&NineD::from_matrix(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]))).ok()?;
    let rotation = Rotation::from_matrix_unchecked(r_plane.matrix() * basis.transpose());
    Some(RigidTransform::new(rotation, t_plane - rotation.apply(&shape.centroid)))
}

fn reprojection_cost(points: &[Vector3<f64>], pixels: &Keypoints2D, k: &Intrinsics, pose: &RigidTransform) -> f64 {
    let mut cost = 0.0;
    for (p, obs) in points.iter().zip(&pixels.0) {
        let pc = pose.apply(p);
        if !(pc.z > 0.0) {
            return f64::INFINITY;
        }
        let px = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
        cost += (px - obs).norm_squared();
    }
    cost
}

/// Gauss-Newton on the left-perturbed pose `(Exp(ω) R, Exp(ω) t + v)` with
/// step halving; a trial step is accepted only if it does not raise the cost.
fn gauss_newton(
    points: &[Vector3<f64>],
    pixels: &Keypoints2D,
    k: &Intrinsics,
    init: RigidTransform,
    opts: &PnpOptions,
) -> Result<(f64, PnpSolution)> {
    let mut pose = init;
    let mut cost = reprojection_cost(points, pixels, k, &pose);
    if !cost.is_finite() {
        return Err(Error::Degenerate("initial pose puts points behind the camera".into()));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (p, obs) in points.iter().zip(&pixels.0) {
            let pc = pose.apply(p);
            let inv_z = 1.0 / pc.z;
            let residual = Vector2::new(k.fx * pc.x * inv_z + k.cx - obs.x, k.fy * pc.y * inv_z + k.cy - obs.y);
            // d(pixel)/d(camera point)
            let dproj = nalgebra::Matrix2x3::new(
                k.fx * inv_z,
                0.0,
                -k.fx * pc.x * inv_z * inv_z,
                0.0,
                k.fy * inv_z,
                -k.fy * pc.y * inv_z * inv_z,
            );
            // d(camera point)/d(ω, v) = [-[pc]×, I]
            let mut dpoint = nalgebra::Matrix3x6::zeros();
            dpoint
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(-crate::transforms::skew(&pc)));
            dpoint.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dpoint;
            jtj += j.transpose() * j;
            jtr += j.transpose() * residual;
        }
        let step = match jtj.cholesky() {
            Some(ch) => -ch.solve(&jtr),
            None => {
                let pinv = jtj
                    .pseudo_inverse(1e-12)
                    .map_err(|_| Error::Degenerate("singular Gauss-Newton system".into()))?;
                -(pinv * jtr)
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let delta = step * alpha;
            let omega = delta.fixed_rows::<3>(0).into_owned();
            let dr = Rotation::exp(&omega);
            let candidate = RigidTransform::new(
                dr.compose(&pose.rotation),
                dr.apply(&pose.translation) + delta.fixed_rows::<3>(3).into_owned(),
            );
            let c = reprojection_cost(points, pixels, k, &candidate);
            if c <= cost {
                accepted = Some((candidate, c, delta.norm()));
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((candidate, c, step_norm)) => {
                pose = candidate;
                cost = c;
                if step_norm < opts.step_tolerance {
                    converged = true;
                    break;
                }
            }
            // no descent along the GN direction: at the numerical minimum
            None => {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }
    let pose = RigidTransform::new(
        orthogonalize_9d(&NineD::from_matrix(pose.rotation.matrix()))?,
        pose.translation,
    );
    let reprojection_error = reprojection_error(points, pixels, k, &pose)?;
    Ok((
        cost,
        PnpSolution {
            extrinsic: pose,
            reprojection_error,
            iterations,
        },
    ))
}

/// Replaces the rigid part by the camera-to-base transform implied by the
/// PnP extrinsic; the scale is kept.
pub fn refine_similarity(sim: &Similarity, pnp_extrinsic: &RigidTransform) -> Similarity {
    Similarity {
        scale: sim.scale,
        rigid: pnp_extrinsic.inverse(),
    }
}

/// Mean pixel distance between projected points and observations.
pub fn reprojection_error(
    points3d: &[Vector3<f64>],
    pixels: &Keypoints2D,
    k: &Intrinsics,
    extrinsic: &RigidTransform,
) -> Result<f64> {
    if points3d.len() != pixels.len() {
        return Err(Error::dims(format!("{} pixels", points3d.len()), pixels.len()));
    }
    if points3d.is_empty() {
        return Err(Error::InvalidInput("no points to reproject".into()));
    }
    let mut total = 0.0;
    for (i, (p, obs)) in points3d.iter().zip(&pixels.0).enumerate() {
        let pc = extrinsic.apply(p);
        let px = project(&pc, k).map_err(|_| Error::PointBehindCamera { index: i, z: pc.z })?;
        total += (px - obs).norm();
    }
    Ok(total / points3d.len() as f64)
}
