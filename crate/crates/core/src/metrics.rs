//! Benchmark metrics for point maps and camera poses, and their dataset-level
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::camera::PointMap;
use crate::error::{Error, Result};
use crate::losses::{align_scale_views, normal_loss_views, point_loss_with_scale};
use crate::transforms::{rotation_angle, RigidTransform};

pub const DEFAULT_REL_THRESHOLD: f64 = 0.03;
pub const DEFAULT_ABS_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMapReport {
    /// Mean absolute coordinate error after optimal scale alignment, meters.
    pub point_err: f64,
    /// Mean normal angle, radians.
    pub normal_err: f64,
    /// `|ŝ − s| / s`.
    pub scale_err: f64,
}

/// Translation threshold in meters, rotation threshold in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub translation: f64,
    pub rotation: f64,
}

impl Thresholds {
    pub fn new(translation: f64, rotation: f64) -> Result<Self> {
        if !(translation > 0.0 && rotation > 0.0) {
            return Err(Error::InvalidInput(format!(
                "thresholds must be positive, got ({translation}, {rotation})"
            )));
        }
        Ok(Self { translation, rotation })
    }

    pub fn relative_default() -> Self {
        Self {
            translation: DEFAULT_REL_THRESHOLD,
            rotation: DEFAULT_REL_THRESHOLD,
        }
    }

    pub fn absolute_default() -> Self {
        Self {
            translation: DEFAULT_ABS_THRESHOLD,
            rotation: DEFAULT_ABS_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub rte: f64,
    pub rre: f64,
    pub rta: f64,
    pub rra: f64,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePoseReport {
    pub ate: f64,
    pub are: f64,
    pub ata: f64,
    pub ara: f64,
    pub thresholds: Thresholds,
}

pub fn point_map_metrics(pred: &PointMap, gt: &PointMap, pred_scale: f64, gt_scale: f64) -> Result<PointMapReport> {
    point_map_metrics_views(
        std::slice::from_ref(pred),
        std::slice::from_ref(gt),
        pred_scale,
        gt_scale,
    )
}

/// Metrics over all views of a sample, sharing one alignment scale.
pub fn point_map_metrics_views(
    pred: &[PointMap],
    gt: &[PointMap],
    pred_scale: f64,
    gt_scale: f64,
) -> Result<PointMapReport> {
    if !(pred_scale.is_finite() && pred_scale > 0.0 && gt_scale.is_finite() && gt_scale > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scales must be positive, got ({pred_scale}, {gt_scale})"
        )));
    }
    let s = align_scale_views(pred, gt)?;
    Ok(PointMapReport {
        point_err: point_loss_with_scale(pred, gt, s)?,
        normal_err: normal_loss_views(pred, gt)?,
        scale_err: (pred_scale - gt_scale).abs() / gt_scale,
    })
}

fn pose_errors(pred: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    (
        (pred.translation - gt.translation).norm(),
        rotation_angle(&pred.rotation, &gt.rotation),
    )
}

fn indicator(below: bool) -> f64 {
    if below {
        1.0
    } else {
        0.0
    }
}

/// Per-pair errors; the accuracies are 1 when the error is strictly below
/// the threshold and 0 otherwise.
pub fn relative_pose_metrics(pred: &RigidTransform, gt: &RigidTransform, thresholds: Thresholds) -> PoseReport {
    let (rte, rre) = pose_errors(pred, gt);
    PoseReport {
        rte,
        rre,
        rta: indicator(rte < thresholds.translation),
        rra: indicator(rre < thresholds.rotation),
        thresholds,
    }
}

/// Same formulas applied to camera poses in the robot base frame.
pub fn absolute_pose_metrics(pred: &RigidTransform, gt: &RigidTransform, thresholds: Thresholds) -> AbsolutePoseReport {
    let (ate, are) = pose_errors(pred, gt);
    AbsolutePoseReport {
        ate,
        are,
        ata: indicator(ate < thresholds.translation),
        ara: indicator(are < thresholds.rotation),
        thresholds,
    }
}

/// Dataset summary: arithmetic mean of every field, which turns per-sample
/// accuracy indicators into the fraction of samples below threshold.
pub trait Aggregate: Sized {
    fn aggregate(reports: &[Self]) -> Result<Self>;
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn same_thresholds(all: impl Iterator<Item = Thresholds>) -> Result<Thresholds> {
    let mut iter = all;
    let first = iter
        .next()
        .ok_or_else(|| Error::InvalidInput("no reports to aggregate".into()))?;
    if iter.any(|t| t != first) {
        return Err(Error::InvalidInput("reports use different thresholds".into()));
    }
    Ok(first)
}

fn non_empty<T>(reports: &[T]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to aggregate".into()));
    }
    Ok(())
}

impl Aggregate for PointMapReport {
    fn aggregate(r: &[Self]) -> Result<Self> {
        non_empty(r)?;
        Ok(Self {
            point_err: mean(r.iter().map(|x| x.point_err)),
            normal_err: mean(r.iter().map(|x| x.normal_err)),
            scale_err: mean(r.iter().map(|x| x.scale_err)),
        })
    }
}

impl Aggregate for PoseReport {
    fn aggregate(r: &[Self]) -> Result<Self> {
        non_empty(r)?;
        Ok(Self {
            rte: mean(r.iter().map(|x| x.rte)),
            rre: mean(r.iter().map(|x| x.rre)),
            rta: mean(r.iter().map(|x| x.rta)),
            rra: mean(r.iter().map(|x| x.rra)),
            thresholds: same_thresholds(r.iter().map(|x| x.thresholds))?,
        })
    }
}

impl Aggregate for AbsolutePoseReport {
    fn aggregate(r: &[Self]) -> Result<Self> {
        non_empty(r)?;
        Ok(Self {
            ate: mean(r.iter().map(|x| x.ate)),
            are: mean(r.iter().map(|x| x.are)),
            ata: mean(r.iter().map(|x| x.ata)),
            ara: mean(r.iter().map(|x| x.ara)),
            thresholds: same_thresholds(r.iter().map(|x| x.thresholds))?,
        })
    }
}

pub fn aggregate<T: Aggregate>(reports: &[T]) -> Result<T> {
    T::aggregate(reports)
}
