//! Finite-difference verification of analytic loss gradients.
//!
//! Each named loss is evaluated on a random instance placed away from its
//! kinks (L1 zero residuals, BCE clamps, rotation angles near 0 or π). The
//! analytic gradient is compared coordinate by coordinate with a central
//! difference; a one-sided slope mismatch flags a non-differentiable point.

use std::fmt;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    align_scale, huber_slope, keypoint_loss, mask_loss, normal_angle, normal_loss, normals_from_pointmap, point_loss,
    relative_pose_loss, rotation_angle, st_loss, HUBER_DELTA,
};
use crate::camera::PointMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::masked::{MaskSet, Part};
use crate::pnp::{Heatmap, Keypoints2D};
use crate::transforms::{RigidTransform, Rotation, Similarity};

pub const FD_EPS: f64 = 1e-6;
/// Relative gap between one-sided slopes above which a point counts as a kink.
pub const KINK_TOL: f64 = 0.1;
const SLOPE_FLOOR: f64 = 1e-6;

/// Max relative error `|a − n| / max(|a|, |n|, 1e-6)` between `analytic` and
/// central differences of `f` over the listed coordinates.
pub fn check_gradient(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
) -> Result<f64> {
    if x.len() != analytic.len() {
        return Err(Error::dims(format!("{} gradient entries", x.len()), analytic.len()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("perturbation must be positive, got {eps}")));
    }
    let f0 = f(x)?;
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        if i >= x.len() {
            return Err(Error::InvalidInput(format!("coordinate {i} out of range")));
        }
        probe[i] = x[i] + eps;
        let up = f(&probe)?;
        probe[i] = x[i] - eps;
        let down = f(&probe)?;
        probe[i] = x[i];
        let (forward, backward) = ((up - f0) / eps, (f0 - down) / eps);
        let scale = forward.abs().max(backward.abs()).max(SLOPE_FLOOR);
        if (forward - backward).abs() > KINK_TOL * scale {
            return Err(Error::NonDifferentiable {
                coordinate: i,
                forward,
                backward,
            });
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SLOPE_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradLoss {
    Mask,
    Point,
    Normal,
    RelativePose,
    Similarity,
    Keypoint,
    RotationAngle,
}

impl GradLoss {
    pub const ALL: [GradLoss; 7] = [
        GradLoss::Mask,
        GradLoss::Point,
        GradLoss::Normal,
        GradLoss::RelativePose,
        GradLoss::Similarity,
        GradLoss::Keypoint,
        GradLoss::RotationAngle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradLoss::Mask => "mask",
            GradLoss::Point => "point",
            GradLoss::Normal => "normal",
            GradLoss::RelativePose => "relative_pose",
            GradLoss::Similarity => "similarity",
            GradLoss::Keypoint => "keypoint",
            GradLoss::RotationAngle => "rotation_angle",
        }
    }
}

impl fmt::Display for GradLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub loss: GradLoss,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

type Objective = Box<dyn Fn(&[f64]) -> Result<f64>>;

/// A loss restricted to a flat parameter vector, with its analytic gradient.
struct Problem {
    x: Vec<f64>,
    f: Objective,
    grad: Vec<f64>,
}

pub fn check_loss_gradient(loss: GradLoss, seed: u64, samples: usize) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = match loss {
        GradLoss::Mask => mask_problem(&mut rng)?,
        GradLoss::Point => point_problem(&mut rng)?,
        GradLoss::Normal => normal_problem(&mut rng)?,
        GradLoss::RelativePose => relative_pose_problem(&mut rng),
        GradLoss::Similarity => similarity_problem(&mut rng),
        GradLoss::Keypoint => keypoint_problem(&mut rng)?,
        GradLoss::RotationAngle => rotation_problem(&mut rng),
    };
    let n = problem.x.len();
    let mut coords = sample(&mut rng, n, samples.min(n)).into_vec();
    coords.sort_unstable();
    let max_rel_error = check_gradient(&problem.f, &problem.x, &problem.grad, &coords, FD_EPS)?;
    Ok(GradReport {
        loss,
        max_rel_error,
        coordinates: coords.len(),
    })
}

pub fn check_all(seed: u64, samples: usize) -> Result<Vec<GradReport>> {
    GradLoss::ALL
        .iter()
        .enumerate()
        .map(|(i, loss)| check_loss_gradient(*loss, seed.wrapping_add(i as u64), samples))
        .collect()
}

const H: usize = 6;
const W: usize = 7;

fn grid_from(x: &[f64]) -> Result<Grid<f64>> {
    Grid::from_vec(H, W, x.to_vec())
}

fn mask_problem(rng: &mut impl Rng) -> Result<Problem> {
    let n = H * W;
    let gt_labels = Grid::from_fn(H, W, |_, _| Part::from_code(rng.random_range(1..=3)));
    let gt = MaskSet::from_labels(&gt_labels);
    let x: Vec<f64> = (0..3 * n).map(|_| rng.random_range(0.05..0.95)).collect();
    let targets: Vec<f64> = Part::ALL
        .iter()
        .flat_map(|p| gt.get(*p).iter().copied().collect::<Vec<_>>())
        .collect();
    let grad = x
        .iter()
        .zip(&targets)
        .map(|(p, t)| (p - t) / (p * (1.0 - p)) / (3 * n) as f64)
        .collect();
    let f = move |x: &[f64]| {
        let pred = MaskSet::new(grid_from(&x[..n])?, grid_from(&x[n..2 * n])?, grid_from(&x[2 * n..])?)?;
        mask_loss(&pred, &gt)
    };
    Ok(Problem {
        x,
        f: Box::new(f),
        grad,
    })
}

fn point_map(x: &[f64]) -> Result<PointMap> {
    let values = (0..H * W)
        .map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
        .collect();
    PointMap::new(Grid::from_vec(H, W, values)?, Grid::filled(H, W, true))
}

fn flatten(map: &PointMap) -> Vec<f64> {
    map.values().iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// A gently curved surface in front of the camera.
fn surface(rng: &mut impl Rng) -> PointMap {
    let (a, b) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let values = Grid::from_fn(H, W, |v, u| {
        let (x, y) = (u as f64 * 0.1 - 0.3, v as f64 * 0.1 - 0.25);
        Vector3::new(x, y, 1.5 + a * x * x + b * x * y + 0.2 * y)
    });
    PointMap::new(values, Grid::filled(H, W, true)).expect("matching shapes")
}

fn point_problem(rng: &mut impl Rng) -> Result<Problem> {
    let gt = surface(rng);
    let gt_flat = flatten(&gt);
    // resample until every residual is comfortably away from the L1 kink
    let x = loop {
        let x: Vec<f64> = gt_flat
            .iter()
            .map(|p| {
                let mag = rng.random_range(0.02..0.05);
                0.7 * p + if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let s = align_scale(&point_map(&x)?, &gt)?;
        if x.iter().zip(&gt_flat).all(|(ph, p)| (s * ph - p).abs() > 1e-4) {
            break x;
        }
    };
    let s = align_scale(&point_map(&x)?, &gt)?;
    let b: f64 = x.iter().map(|v| v * v).sum();
    let signs: Vec<f64> = x.iter().zip(&gt_flat).map(|(ph, p)| (s * ph - p).signum()).collect();
    let weighted: f64 = signs.iter().zip(&x).map(|(g, ph)| g * ph).sum();
    let norm = 1.0 / x.len() as f64;
    let grad = x
        .iter()
        .zip(&gt_flat)
        .zip(&signs)
        .map(|((ph, p), g)| norm * (g * s + weighted * (p - 2.0 * s * ph) / b))
        .collect();
    let f = move |x: &[f64]| point_loss(&point_map(x)?, &gt);
    Ok(Problem {
        x,
        f: Box::new(f),
        grad,
    })
}

fn normal_problem(rng: &mut impl Rng) -> Result<Problem> {
    let gt = surface(rng);
    let ng = normals_from_pointmap(&gt);
    // the angle has a kink at zero, so keep every normal pair clearly apart
    let (x, pred, np) = loop {
        let x: Vec<f64> = flatten(&gt).iter().map(|p| p + rng.random_range(-0.02..0.02)).collect();
        let pred = point_map(&x)?;
        let np = normals_from_pointmap(&pred);
        let min_angle = np
            .values()
            .iter()
            .zip(ng.values().iter())
            .zip(np.valid().iter())
            .filter(|(_, ok)| **ok)
            .map(|((a, b), _)| normal_angle(a, b))
            .fold(f64::INFINITY, f64::min);
        if min_angle > 0.05 {
            break (x, pred, np);
        }
    };
    let k = np.valid_count() as f64;
    let mut grad = vec![0.0; x.len()];
    let mut add = |v: usize, u: usize, g: Vector3<f64>| {
        let i = 3 * (v * W + u);
        for c in 0..3 {
            grad[i + c] += g[c] / k;
        }
    };
    let p = |v: usize, u: usize| *pred.values().get(v, u);
    for v in 1..H - 1 {
        for u in 1..W - 1 {
            let (Some(nh), Some(n)) = (np.normal(v, u), ng.normal(v, u)) else {
                continue;
            };
            let a = p(v, u + 1) - p(v, u - 1);
            let b = p(v + 1, u) - p(v - 1, u);
            let c = a.cross(&b);
            let cos = nh.dot(n);
            let sin = nh.cross(n).norm();
            // dθ/dc for θ = angle(c / |c|, n)
            let g = -(n - nh * cos) / (c.norm() * sin);
            add(v, u + 1, b.cross(&g));
            add(v, u - 1, -b.cross(&g));
            add(v + 1, u, g.cross(&a));
            add(v - 1, u, -g.cross(&a));
        }
    }
    let f = move |x: &[f64]| normal_loss(&point_map(x)?, &gt);
    Ok(Problem {
        x,
        f: Box::new(f),
        grad,
    })
}

/// Gradient of `rotation_angle(Exp(ω) pred, gt)` with respect to `ω` at zero.
pub fn rotation_angle_gradient(pred: &Rotation, gt: &Rotation) -> Vector3<f64> {
    let d: Matrix3<f64> = gt.matrix() * pred.matrix().transpose();
    let dtrace = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
    let theta = rotation_angle(pred, gt);
    -dtrace / (2.0 * theta.sin())
}

fn random_rotation(rng: &mut impl Rng, angle: std::ops::Range<f64>) -> Rotation {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Rotation::about_axis(&axis, rng.random_range(angle))
}

/// Translation residuals kept inside the quadratic Huber zone, away from `δ`.
fn residual(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| {
        let r = if rng.random_bool(0.5) {
            rng.random_range(0.05..0.8)
        } else {
            rng.random_range(1.2..2.0)
        };
        if rng.random_bool(0.5) {
            r
        } else {
            -r
        }
    })
}

fn perturbed(base: &RigidTransform, x: &[f64]) -> RigidTransform {
    let omega = Vector3::new(x[3], x[4], x[5]);
    RigidTransform::new(
        Rotation::exp(&omega).compose(&base.rotation),
        base.translation + Vector3::new(x[0], x[1], x[2]),
    )
}

fn relative_pose_problem(rng: &mut impl Rng) -> Problem {
    let gt = RigidTransform::new(random_rotation(rng, 0.0..3.0), Vector3::new(0.2, -0.1, 0.5));
    let offset = random_rotation(rng, 0.2..2.5);
    let pred = RigidTransform::new(offset.compose(&gt.rotation), gt.translation + residual(rng));
    let alpha = rng.random_range(0.5..2.0);
    let rot = rotation_angle_gradient(&pred.rotation, &gt.rotation);
    let r = pred.translation - gt.translation;
    let grad = (0..3)
        .map(|i| alpha * huber_slope(r[i], HUBER_DELTA))
        .chain(rot.iter().copied())
        .collect();
    let f = move |x: &[f64]| Ok(relative_pose_loss(&perturbed(&pred, x), &gt, alpha));
    Problem {
        x: vec![0.0; 6],
        f: Box::new(f),
        grad,
    }
}

fn similarity_problem(rng: &mut impl Rng) -> Problem {
    let gt_rigid = RigidTransform::new(random_rotation(rng, 0.0..3.0), Vector3::new(0.6, 0.1, 0.9));
    let gt = Similarity::new(rng.random_range(0.5..2.0), gt_rigid).expect("positive scale");
    let offset = random_rotation(rng, 0.2..2.5);
    let pred_rigid = RigidTransform::new(offset.compose(&gt_rigid.rotation), gt_rigid.translation + residual(rng));
    let ds = rng.random_range(0.05..0.4) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let scale = gt.scale + ds;
    let (b1, b2) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    let r = pred_rigid.translation - gt_rigid.translation;
    let rot = rotation_angle_gradient(&pred_rigid.rotation, &gt_rigid.rotation);
    let grad = std::iter::once(b1 * huber_slope(ds, HUBER_DELTA))
        .chain((0..3).map(|i| b2 * huber_slope(r[i], HUBER_DELTA)))
        .chain(rot.iter().copied())
        .collect();
    let f = move |x: &[f64]| {
        let pred = Similarity::new(scale + x[0], perturbed(&pred_rigid, &x[1..]))?;
        Ok(st_loss(&pred, &gt, b1, b2))
    };
    Problem {
        x: vec![0.0; 7],
        f: Box::new(f),
        grad,
    }
}

fn keypoint_problem(rng: &mut impl Rng) -> Result<Problem> {
    let n_kp = 3;
    let (h, w) = (10, 12);
    let gt_kp = Keypoints2D(
        (0..n_kp)
            .map(|_| Vector2::new(rng.random_range(2.0..9.0), rng.random_range(2.0..7.0)))
            .collect(),
    );
    let gt_hm = Heatmap::gaussian(h, w, &gt_kp, 1.5, 1.0);
    let cells = h * w * n_kp;
    let mut x = Vec::with_capacity(cells + 2 * n_kp);
    for ch in gt_hm.channels() {
        for t in ch.iter() {
            let d = rng.random_range(0.01..0.1);
            x.push(if *t > 0.2 && rng.random_bool(0.5) { t - d } else { t + d });
        }
    }
    for p in &gt_kp.0 {
        for c in 0..2 {
            let d = rng.random_range(0.1..1.0);
            x.push(p[c] + if rng.random_bool(0.5) { d } else { -d });
        }
    }
    let gamma = rng.random_range(0.5..2.0);
    let targets: Vec<f64> = gt_hm
        .channels()
        .iter()
        .flat_map(|ch| ch.iter().copied().collect::<Vec<_>>())
        .chain(gt_kp.0.iter().flat_map(|p| [p.x, p.y]))
        .collect();
    let grad = x
        .iter()
        .zip(&targets)
        .enumerate()
        .map(|(i, (a, b))| {
            let norm = if i < cells {
                gamma / cells as f64
            } else {
                1.0 / (2 * n_kp) as f64
            };
            (a - b).signum() * norm
        })
        .collect();
    let f = move |x: &[f64]| {
        let channels = (0..n_kp)
            .map(|k| Grid::from_vec(h, w, x[k * h * w..(k + 1) * h * w].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let hm = Heatmap::new(h, w, channels)?;
        let kp = Keypoints2D(
            (0..n_kp)
                .map(|k| Vector2::new(x[cells + 2 * k], x[cells + 2 * k + 1]))
                .collect(),
        );
        keypoint_loss(&hm, &gt_hm, &kp, &gt_kp, gamma)
    };
    Ok(Problem {
        x,
        f: Box::new(f),
        grad,
    })
}

/// Rotation angle between identity-adjacent rotations.
fn rotation_problem(rng: &mut impl Rng) -> Problem {
    let pred = random_rotation(rng, 0.0..0.05);
    let gt = random_rotation(rng, 0.01..0.05).compose(&pred);
    let grad = rotation_angle_gradient(&pred, &gt).iter().copied().collect();
    let f = move |x: &[f64]| {
        Ok(rotation_angle(
            &Rotation::exp(&Vector3::new(x[0], x[1], x[2])).compose(&pred),
            &gt,
        ))
    };
    Problem {
        x: vec![0.0; 3],
        f: Box::new(f),
        grad,
    }
}
