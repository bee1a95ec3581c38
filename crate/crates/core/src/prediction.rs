//! The full set of per-sample outputs: per-view depth, coordinates and masks,
//! relative poses, the global similarity and the keypoint head. The same
//! structure holds ground truth, so losses and metrics compare like with like.

use crate::camera::{unproject, CoordMap, DepthMap, PointMap};
use crate::error::{Error, Result};
use crate::masked::MaskSet;
use crate::pnp::{Heatmap, Keypoints2D};
use crate::transforms::{register_views, to_canonical, RigidTransform, Similarity};

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPrediction {
    pub depth: DepthMap,
    pub coords: CoordMap,
    pub masks: MaskSet,
}

impl ViewPrediction {
    pub fn new(depth: DepthMap, coords: CoordMap, masks: MaskSet) -> Result<Self> {
        depth.values().check_shape(coords.values())?;
        if depth.shape() != masks.shape() {
            return Err(Error::dims(
                format!("{:?} masks", depth.shape()),
                format!("{:?}", masks.shape()),
            ));
        }
        Ok(Self { depth, coords, masks })
    }

    pub fn local_points(&self) -> Result<PointMap> {
        unproject(&self.coords, &self.depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    pub views: Vec<ViewPrediction>,
    /// Pose of each view in the first view's frame; entry 0 is the identity.
    pub relative_poses: Vec<RigidTransform>,
    /// First camera frame to the robot base frame.
    pub similarity: Similarity,
    /// Keypoint head output for the first view.
    pub heatmap: Heatmap,
    pub keypoints: Keypoints2D,
}

impl ScenePrediction {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidInput("prediction has no views".into()));
        }
        if self.relative_poses.len() != self.views.len() {
            return Err(Error::dims(
                format!("{} relative poses", self.views.len()),
                self.relative_poses.len(),
            ));
        }
        if self.heatmap.num_keypoints() != self.keypoints.len() {
            return Err(Error::dims(
                format!("{} keypoints", self.heatmap.num_keypoints()),
                self.keypoints.len(),
            ));
        }
        Ok(())
    }

    pub fn local_points(&self) -> Result<Vec<PointMap>> {
        self.views.iter().map(ViewPrediction::local_points).collect()
    }

    pub fn registered_points(&self) -> Result<Vec<PointMap>> {
        register_views(&self.local_points()?, &self.relative_poses)
    }

    /// Metric points in the robot base frame.
    pub fn canonical_points(&self) -> Result<Vec<PointMap>> {
        Ok(to_canonical(&self.registered_points()?, &self.similarity))
    }
}
