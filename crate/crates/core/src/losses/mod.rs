//! Training objectives: scale-aligned point loss, normal loss, mask BCE,
//! relative pose, similarity and keypoint losses, and their weighted sum.
//!
//! Reductions run sequentially in row-major pixel order, views in order, so
//! every value is bit-reproducible.

pub mod gradcheck;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::PointMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::masked::{MaskSet, Part};
use crate::pnp::{Heatmap, Keypoints2D};
use crate::prediction::ScenePrediction;
use crate::transforms::{rotation_angle, RigidTransform, Similarity};

pub const BCE_EPS: f64 = 1e-7;
pub const HUBER_DELTA: f64 = 1.0;

/// Balancing coefficients. The defaults are placeholders, not tuned values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub lambda_point: f64,
    pub lambda_normal: f64,
    pub lambda_mask: f64,
    pub lambda_rel: f64,
    pub lambda_st: f64,
    pub lambda_kp: f64,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta1: 1.0,
            beta2: 1.0,
            gamma: 1.0,
            lambda_point: 1.0,
            lambda_normal: 1.0,
            lambda_mask: 1.0,
            lambda_rel: 1.0,
            lambda_st: 1.0,
            lambda_kp: 1.0,
            huber_delta: HUBER_DELTA,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta1,
            self.beta2,
            self.gamma,
            self.lambda_point,
            self.lambda_normal,
            self.lambda_mask,
            self.lambda_rel,
            self.lambda_st,
            self.lambda_kp,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(Error::InvalidInput("Huber delta must be positive".into()));
        }
        Ok(())
    }
}

fn check_views(pred: &[PointMap], gt: &[PointMap]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::dims(format!("{} views", gt.len()), pred.len()));
    }
    for (p, g) in pred.iter().zip(gt) {
        p.values().check_shape(g.values())?;
    }
    Ok(())
}

/// Jointly valid `(predicted, true)` point pairs across all views.
fn joint_pairs<'a>(
    pred: &'a [PointMap],
    gt: &'a [PointMap],
) -> impl Iterator<Item = (&'a Vector3<f64>, &'a Vector3<f64>)> {
    pred.iter().zip(gt).flat_map(|(p, g)| {
        p.values()
            .iter()
            .zip(g.values().iter())
            .zip(p.valid().iter().zip(g.valid().iter()))
            .filter_map(|(pts, (a, b))| (*a && *b).then_some(pts))
    })
}

/// Scale `s` minimizing `Σ ‖s p̂ − p‖²` over jointly valid pixels.
pub fn align_scale(pred: &PointMap, gt: &PointMap) -> Result<f64> {
    align_scale_views(std::slice::from_ref(pred), std::slice::from_ref(gt))
}

/// One scale shared by all views of a sample.
pub fn align_scale_views(pred: &[PointMap], gt: &[PointMap]) -> Result<f64> {
    check_views(pred, gt)?;
    let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
    for (p_hat, p) in joint_pairs(pred, gt) {
        num += p_hat.dot(p);
        den += p_hat.dot(p_hat);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    if den == 0.0 {
        return Err(Error::Degenerate("all predicted points are zero".into()));
    }
    Ok(num / den)
}

/// Mean absolute coordinate error after scaling the prediction by `scale`,
/// averaged over the three coordinates of every jointly valid pixel.
pub fn point_loss_with_scale(pred: &[PointMap], gt: &[PointMap], scale: f64) -> Result<f64> {
    check_views(pred, gt)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (p_hat, p) in joint_pairs(pred, gt) {
        sum += (p_hat * scale - p).abs().sum();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(sum / (3 * count) as f64)
}

pub fn point_loss(pred: &PointMap, gt: &PointMap) -> Result<f64> {
    point_loss_views(std::slice::from_ref(pred), std::slice::from_ref(gt))
}

pub fn point_loss_views(pred: &[PointMap], gt: &[PointMap]) -> Result<f64> {
    let s = align_scale_views(pred, gt)?;
    point_loss_with_scale(pred, gt, s)
}

/// Unit surface normals with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    values: Grid<Vector3<f64>>,
    valid: Grid<bool>,
}

impl NormalMap {
    pub fn values(&self) -> &Grid<Vector3<f64>> {
        &self.values
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn normal(&self, v: usize, u: usize) -> Option<&Vector3<f64>> {
        self.valid.get(v, u).then(|| self.values.get(v, u))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|ok| **ok).count()
    }
}

/// `normalize((right − left) × (down − up))` at interior pixels whose four
/// neighbors are valid. Border pixels, pixels next to holes and degenerate
/// (zero-area) neighborhoods are invalid.
pub fn normals_from_pointmap(points: &PointMap) -> NormalMap {
    let (h, w) = points.shape();
    let mut values = Grid::filled(h, w, Vector3::zeros());
    let mut valid = Grid::filled(h, w, false);
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            let (Some(_), Some(l), Some(r), Some(up), Some(dn)) = (
                points.point(v, u),
                points.point(v, u - 1),
                points.point(v, u + 1),
                points.point(v - 1, u),
                points.point(v + 1, u),
            ) else {
                continue;
            };
            let n = (r - l).cross(&(dn - up));
            let norm = n.norm();
            if norm > 0.0 && norm.is_finite() {
                *values.get_mut(v, u) = n / norm;
                *valid.get_mut(v, u) = true;
            }
        }
    }
    NormalMap { values, valid }
}

pub fn normal_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

pub fn normal_loss(pred: &PointMap, gt: &PointMap) -> Result<f64> {
    normal_loss_views(std::slice::from_ref(pred), std::slice::from_ref(gt))
}

/// Mean angle between predicted and true normals over every jointly valid
/// normal of every view.
pub fn normal_loss_views(pred: &[PointMap], gt: &[PointMap]) -> Result<f64> {
    check_views(pred, gt)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let (np, ng) = (normals_from_pointmap(p), normals_from_pointmap(g));
        for ((a, b), (va, vb)) in np
            .values
            .iter()
            .zip(ng.values.iter())
            .zip(np.valid.iter().zip(ng.valid.iter()))
        {
            if *va && *vb {
                sum += normal_angle(a, b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(sum / count as f64)
}

/// Binary cross-entropy with the prediction clamped to `[ε, 1 − ε]`.
pub fn bce(pred: f64, target: f64) -> f64 {
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

pub fn mask_loss(pred: &MaskSet, gt: &MaskSet) -> Result<f64> {
    mask_loss_views(std::slice::from_ref(pred), std::slice::from_ref(gt))
}

/// Mean BCE over all pixels and all three parts of every view.
pub fn mask_loss_views(pred: &[MaskSet], gt: &[MaskSet]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::dims(format!("{} views", gt.len()), pred.len()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        if p.shape() != g.shape() {
            return Err(Error::dims(
                format!("{:?} masks", g.shape()),
                format!("{:?}", p.shape()),
            ));
        }
        for part in Part::ALL {
            for (a, b) in p.get(part).iter().zip(g.get(part).iter()) {
                sum += bce(*a, *b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("empty masks".into()));
    }
    Ok(sum / count as f64)
}

pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * a * a
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the residual.
pub fn huber_slope(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

/// Per-coordinate Huber, summed.
pub fn huber_vec(pred: &Vector3<f64>, gt: &Vector3<f64>, delta: f64) -> f64 {
    (pred - gt).iter().map(|r| huber(*r, delta)).sum()
}

pub fn relative_pose_loss(pred: &RigidTransform, gt: &RigidTransform, alpha: f64) -> f64 {
    relative_pose_loss_with(pred, gt, alpha, HUBER_DELTA)
}

pub fn relative_pose_loss_with(pred: &RigidTransform, gt: &RigidTransform, alpha: f64, delta: f64) -> f64 {
    alpha * huber_vec(&pred.translation, &gt.translation, delta) + rotation_angle(&pred.rotation, &gt.rotation)
}

/// Scale, translation and rotation residuals of the similarity; its rigid
/// part is the first camera's absolute pose in the robot frame.
pub fn st_loss(pred: &Similarity, gt: &Similarity, beta1: f64, beta2: f64) -> f64 {
    st_loss_with(pred, gt, beta1, beta2, HUBER_DELTA)
}

pub fn st_loss_with(pred: &Similarity, gt: &Similarity, beta1: f64, beta2: f64, delta: f64) -> f64 {
    beta1 * huber(pred.scale - gt.scale, delta)
        + beta2 * huber_vec(&pred.rigid.translation, &gt.rigid.translation, delta)
        + rotation_angle(&pred.rigid.rotation, &gt.rigid.rotation)
}

/// `γ · mean|M̂ − M| + mean|Ĉ − C|`, the means taken over all heatmap cells
/// and over both coordinates of every keypoint.
pub fn keypoint_loss(
    pred_hm: &Heatmap,
    gt_hm: &Heatmap,
    pred_kp: &Keypoints2D,
    gt_kp: &Keypoints2D,
    gamma: f64,
) -> Result<f64> {
    let (hm, kp) = keypoint_terms(pred_hm, gt_hm, pred_kp, gt_kp)?;
    Ok(gamma * hm + kp)
}

/// The heatmap and coordinate terms of [`keypoint_loss`], unweighted.
pub fn keypoint_terms(
    pred_hm: &Heatmap,
    gt_hm: &Heatmap,
    pred_kp: &Keypoints2D,
    gt_kp: &Keypoints2D,
) -> Result<(f64, f64)> {
    let shape = |h: &Heatmap| (h.height(), h.width(), h.num_keypoints());
    if shape(pred_hm) != shape(gt_hm) {
        return Err(Error::dims(
            format!("{:?} heatmap", shape(gt_hm)),
            format!("{:?}", shape(pred_hm)),
        ));
    }
    if pred_kp.len() != gt_kp.len() {
        return Err(Error::dims(format!("{} keypoints", gt_kp.len()), pred_kp.len()));
    }
    if gt_kp.len() != gt_hm.num_keypoints() {
        return Err(Error::dims(format!("{} keypoints", gt_hm.num_keypoints()), gt_kp.len()));
    }
    if gt_kp.is_empty() {
        return Err(Error::InvalidInput("no keypoints".into()));
    }
    let mut hm_sum = 0.0;
    let mut cells = 0usize;
    for (a, b) in pred_hm.channels().iter().zip(gt_hm.channels()) {
        for (x, y) in a.iter().zip(b.iter()) {
            hm_sum += (x - y).abs();
            cells += 1;
        }
    }
    let hm = if cells == 0 { 0.0 } else { hm_sum / cells as f64 };
    let kp_sum: f64 = pred_kp.0.iter().zip(&gt_kp.0).map(|(a, b)| (a - b).abs().sum()).sum();
    Ok((hm, kp_sum / (2 * gt_kp.len()) as f64))
}

/// Unweighted value of every loss term and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub point: f64,
    pub normal: f64,
    pub mask: f64,
    pub rel: f64,
    pub st: f64,
    pub kp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("point", self.point),
            ("normal", self.normal),
            ("mask", self.mask),
            ("rel", self.rel),
            ("st", self.st),
            ("kp", self.kp),
        ]
    }

    /// Weighted sum of the six terms.
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.lambda_point * self.point
            + w.lambda_normal * self.normal
            + w.lambda_mask * self.mask
            + w.lambda_rel * self.rel
            + w.lambda_st * self.st
            + w.lambda_kp * self.kp
    }
}

/// All six objectives for one sample. The point loss compares registered
/// points (first-view frame) with one shared scale, the normal loss compares
/// each view's local points, and the relative pose loss averages over views
/// after the first (zero for a single view).
pub fn total_loss(pred: &ScenePrediction, gt: &ScenePrediction, w: &LossWeights) -> Result<LossBreakdown> {
    pred.validate()?;
    gt.validate()?;
    w.validate()?;
    if pred.views.len() != gt.views.len() {
        return Err(Error::dims(format!("{} views", gt.views.len()), pred.views.len()));
    }
    let point = point_loss_views(&pred.registered_points()?, &gt.registered_points()?)?;
    let normal = normal_loss_views(&pred.local_points()?, &gt.local_points()?)?;
    let pm: Vec<MaskSet> = pred.views.iter().map(|v| v.masks.clone()).collect();
    let gm: Vec<MaskSet> = gt.views.iter().map(|v| v.masks.clone()).collect();
    let mask = mask_loss_views(&pm, &gm)?;
    let pairs = pred.relative_poses.len() - 1;
    let rel = if pairs == 0 {
        0.0
    } else {
        pred.relative_poses[1..]
            .iter()
            .zip(&gt.relative_poses[1..])
            .map(|(p, g)| relative_pose_loss_with(p, g, w.alpha, w.huber_delta))
            .sum::<f64>()
            / pairs as f64
    };
    let st = st_loss_with(&pred.similarity, &gt.similarity, w.beta1, w.beta2, w.huber_delta);
    let kp = keypoint_loss(&pred.heatmap, &gt.heatmap, &pred.keypoints, &gt.keypoints, w.gamma)?;
    let mut out = LossBreakdown {
        point,
        normal,
        mask,
        rel,
        st,
        kp,
        total: 0.0,
    };
    out.total = out.weighted(w);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{Rotation, Transform3};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut impl Rng, h: usize, w: usize) -> PointMap {
        let values = Grid::from_fn(h, w, |_, _| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
            )
        });
        PointMap::new(values, Grid::filled(h, w, true)).unwrap()
    }

    fn scaled(map: &PointMap, s: f64) -> PointMap {
        map.map_points(|p| p * s)
    }

    #[test]
    fn align_scale_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let gt = random_map(&mut rng, 5, 6);
        assert!((align_scale(&scaled(&gt, 0.5), &gt).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(align_scale(&gt, &gt).unwrap(), 1.0);
    }

    #[test]
    fn align_scale_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let gt = random_map(&mut rng, 3, 3);
        let zero = gt.map_points(|_| Vector3::zeros());
        assert!(matches!(align_scale(&zero, &gt), Err(Error::Degenerate(_))));
        let empty = gt.restricted(&Grid::filled(3, 3, false)).unwrap();
        assert!(matches!(align_scale(&empty, &gt), Err(Error::EmptyOverlap)));
    }

    #[test]
    fn align_scale_near_l1_grid_optimum_at_low_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..3 {
            let gt = random_map(&mut rng, 2, 3);
            let noisy = gt
                .values()
                .map(|p| p * 0.7 + Vector3::from_fn(|_, _| rng.random_range(-1e-6..1e-6)));
            let pred = PointMap::new(noisy, gt.valid().clone()).unwrap();
            let s = align_scale(&pred, &gt).unwrap();
            let (mut best, mut best_cost) = (0.0, f64::INFINITY);
            for i in 0..=990_000u32 {
                let c = 0.1 + f64::from(i) * 1e-5;
                let cost = point_loss_with_scale(std::slice::from_ref(&pred), std::slice::from_ref(&gt), c).unwrap();
                if cost < best_cost {
                    (best, best_cost) = (c, cost);
                }
            }
            assert!((s - best).abs() < 1e-4, "closed form {s}, L1 grid {best}");
        }
    }

    #[test]
    fn point_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let gt = random_map(&mut rng, 6, 7);
        for lambda in [0.1, 1.0, 7.3] {
            assert!(point_loss(&scaled(&gt, lambda), &gt).unwrap() < 1e-15);
        }
        let one = |p: Vector3<f64>| PointMap::new(Grid::filled(1, 1, p), Grid::filled(1, 1, true)).unwrap();
        assert_eq!(
            point_loss(&one(Vector3::new(1.0, 1.0, 1.0)), &one(Vector3::new(1.0, 1.0, 1.0))).unwrap(),
            0.0
        );

        // far points: alignment barely moves, offset is diluted across 3 coordinates
        let far = gt.map_points(|p| p * 1e4);
        let shifted = far.map_points(|p| p + Vector3::new(0.03, 0.0, 0.0));
        let s = align_scale(&shifted, &far).unwrap();
        let direct: f64 = shifted
            .values()
            .iter()
            .zip(far.values().iter())
            .map(|(a, b)| (a * s - b).abs().sum())
            .sum::<f64>()
            / (3 * 42) as f64;
        let loss = point_loss(&shifted, &far).unwrap();
        assert!((loss - direct).abs() < 1e-12);
        assert!((loss - 0.01).abs() < 1e-3);
    }

    fn plane(h: usize, w: usize, tilt: f64) -> PointMap {
        let r = Rotation::about_axis(&Vector3::x(), tilt);
        let values = Grid::from_fn(h, w, |v, u| r.apply(&Vector3::new(u as f64 * 0.1, v as f64 * 0.1, 2.0)));
        PointMap::new(values, Grid::filled(h, w, true)).unwrap()
    }

    #[test]
    fn plane_normals_are_axis_aligned() {
        let n = normals_from_pointmap(&plane(5, 6, 0.0));
        assert_eq!(n.valid_count(), 3 * 4);
        for v in 0..5 {
            for u in 0..6 {
                match n.normal(v, u) {
                    Some(n) => assert!((n.z.abs() - 1.0).abs() < 1e-12 && n.x == 0.0 && n.y == 0.0),
                    None => assert!(v == 0 || u == 0 || v == 4 || u == 5),
                }
            }
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let step = 1e-3;
        let values = Grid::from_fn(21, 21, |v, u| {
            let (theta, phi) = (0.6 + (v as f64) * step, 0.3 + (u as f64) * step);
            Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
        });
        let map = PointMap::new(values.clone(), Grid::filled(21, 21, true)).unwrap();
        let n = normals_from_pointmap(&map);
        for (i, (p, ok)) in values.iter().zip(n.valid().iter()).enumerate() {
            if *ok {
                let angle = normal_angle(&n.values().as_slice()[i], p);
                assert!(angle.min(std::f64::consts::PI - angle) < 1e-2);
            }
        }
        assert_eq!(n.valid_count(), 19 * 19);
    }

    #[test]
    fn invalid_neighbor_invalidates_normal() {
        let mut keep = Grid::filled(5, 5, true);
        *keep.get_mut(2, 3) = false;
        let map = plane(5, 5, 0.0).restricted(&keep).unwrap();
        let n = normals_from_pointmap(&map);
        assert!(n.normal(2, 2).is_none());
        assert!(n.normal(1, 3).is_none());
        assert!(n.normal(1, 1).is_some());
    }

    #[test]
    fn normal_loss_examples() {
        let flat = plane(6, 6, 0.0);
        assert_eq!(normal_loss(&flat, &flat).unwrap(), 0.0);
        assert!((normal_loss(&plane(6, 6, 0.2), &flat).unwrap() - 0.2).abs() < 1e-12);
        let flipped = PointMap::new(
            Grid::from_fn(6, 6, |v, u| Vector3::new(-(u as f64) * 0.1, v as f64 * 0.1, 2.0)),
            Grid::filled(6, 6, true),
        )
        .unwrap();
        assert!((normal_loss(&flipped, &flat).unwrap() - std::f64::consts::PI).abs() < 1e-12);
        let tilted = plane(6, 6, 0.7);
        assert_eq!(
            normal_loss(&tilted, &flat).unwrap(),
            normal_loss(&flat, &tilted).unwrap()
        );
        let tiny = plane(2, 2, 0.0);
        assert!(matches!(normal_loss(&tiny, &tiny), Err(Error::EmptyOverlap)));
    }

    fn masks_from(r: Grid<f64>, o: Grid<f64>, b: Grid<f64>) -> MaskSet {
        MaskSet::new(r, o, b).unwrap()
    }

    #[test]
    fn mask_loss_examples() {
        let labels = Grid::from_fn(4, 5, |v, u| Part::from_code(((u + v) % 3 + 1) as u8));
        let gt = MaskSet::from_labels(&labels);
        let perfect = mask_loss(&gt, &gt).unwrap();
        assert!(perfect > 0.0 && perfect <= 3.0 * bce(1.0 - BCE_EPS, 1.0));
        let half = masks_from(
            Grid::filled(4, 5, 0.5),
            Grid::filled(4, 5, 0.5),
            Grid::filled(4, 5, 0.5),
        );
        assert!((mask_loss(&half, &gt).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mask_loss_matches_direct_sum_with_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (h, w) = (10, 10);
        let gt_grid = |rng: &mut ChaCha8Rng| Grid::from_fn(h, w, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let gt = masks_from(gt_grid(&mut rng), gt_grid(&mut rng), gt_grid(&mut rng));
        let flip: Vec<bool> = (0..h * w).map(|i| i % 10 == 3).collect();
        let flipped = |g: &Grid<f64>| {
            Grid::from_vec(
                h,
                w,
                g.iter()
                    .zip(&flip)
                    .map(|(x, f)| if *f { 1.0 - x } else { *x })
                    .collect(),
            )
            .unwrap()
        };
        let pred = masks_from(
            flipped(gt.get(Part::Robot)),
            flipped(gt.get(Part::Object)),
            flipped(gt.get(Part::Background)),
        );
        let mut direct = 0.0;
        for part in Part::ALL {
            for (p, t) in pred.get(part).iter().zip(gt.get(part).iter()) {
                let pc = p.clamp(1e-7, 1.0 - 1e-7);
                direct -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            }
        }
        direct /= (3 * h * w) as f64;
        assert!((mask_loss(&pred, &gt).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn pose_loss_examples() {
        let gt = RigidTransform::new(
            Rotation::about_axis(&Vector3::new(1.0, 2.0, 0.5), 0.4),
            Vector3::new(0.1, 0.2, 0.3),
        );
        assert_eq!(relative_pose_loss(&gt, &gt, 1.0), 0.0);
        let off = RigidTransform::new(gt.rotation, gt.translation + Vector3::new(0.5, 0.0, 0.0));
        assert!((relative_pose_loss(&off, &gt, 1.0) - 0.125).abs() < 1e-15);
        let rot = RigidTransform::new(
            gt.rotation.compose(&Rotation::about_axis(&Vector3::y(), 0.3)),
            gt.translation,
        );
        assert!((relative_pose_loss(&rot, &gt, 1.0) - 0.3).abs() < 1e-12);
        assert_eq!(huber(3.0, 1.0), 2.5);
    }

    #[test]
    fn st_loss_examples() {
        let gt = Similarity::new(
            1.2,
            RigidTransform::new(Rotation::about_axis(&Vector3::z(), 1.0), Vector3::new(0.4, -0.1, 0.8)),
        )
        .unwrap();
        assert_eq!(st_loss(&gt, &gt, 1.0, 1.0), 0.0);
        let scale_only = Similarity::new(1.4, gt.rigid).unwrap();
        assert!((st_loss(&scale_only, &gt, 1.0, 1.0) - 0.02).abs() < 1e-15);

        let rigid = RigidTransform::new(
            gt.rigid.rotation.compose(&Rotation::about_axis(&Vector3::x(), 0.25)),
            gt.rigid.translation + Vector3::new(0.3, -2.0, 0.1),
        );
        let all = Similarity::new(0.9, rigid).unwrap();
        let (b1, b2) = (0.7, 1.9);
        let expected = b1 * 0.5 * 0.3f64.powi(2) + b2 * (0.5 * 0.09 + 1.5 + 0.5 * 0.01) + 0.25;
        assert!((st_loss(&all, &gt, b1, b2) - expected).abs() < 1e-12);
    }

    fn small_heatmap(kps: &Keypoints2D) -> Heatmap {
        Heatmap::gaussian(12, 16, kps, 2.0, 1.0)
    }

    #[test]
    fn keypoint_loss_examples() {
        let gt_kp = Keypoints2D(vec![Vector2::new(3.0, 4.0), Vector2::new(10.5, 7.25)]);
        let hm = small_heatmap(&gt_kp);
        assert_eq!(keypoint_loss(&hm, &hm, &gt_kp, &gt_kp, 1.0).unwrap(), 0.0);
        let moved = Keypoints2D(gt_kp.0.iter().map(|p| p + Vector2::new(1.0, 0.0)).collect());
        assert_eq!(keypoint_loss(&hm, &hm, &moved, &gt_kp, 1.0).unwrap(), 0.5);

        let other = small_heatmap(&moved);
        let l1 = keypoint_loss(&other, &hm, &moved, &gt_kp, 1.0).unwrap();
        let l2 = keypoint_loss(&other, &hm, &moved, &gt_kp, 2.0).unwrap();
        let (hm_term, kp_term) = keypoint_terms(&other, &hm, &moved, &gt_kp).unwrap();
        assert!((l2 - l1 - hm_term).abs() < 1e-15);
        assert_eq!(kp_term, 0.5);

        let short = Keypoints2D(vec![Vector2::new(3.0, 4.0)]);
        assert!(matches!(
            keypoint_loss(&hm, &hm, &short, &gt_kp, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn huber_is_continuous_at_delta() {
        let d = 0.7;
        assert!((huber(d - 1e-12, d) - huber(d + 1e-12, d)).abs() < 1e-11);
        assert_eq!(huber_slope(5.0, d), d);
        let t = RigidTransform::identity();
        assert_eq!(relative_pose_loss(&t, &t, 3.0), 0.0);
    }
}
