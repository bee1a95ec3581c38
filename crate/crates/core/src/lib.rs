//! Geometry, kinematics, loss and evaluation machinery for feed-forward
//! metric-scale reconstruction of robot workspaces.
//!
//! The pipeline goes from per-view depth and normalized-coordinate rasters to
//! camera-frame point maps ([`camera`]), registers views with relative poses
//! and maps them into the robot base frame with a similarity transform
//! ([`transforms`]), and recovers camera extrinsics from robot keypoints
//! ([`kinematics`], [`pnp`]). [`losses`] and [`metrics`] score predictions
//! against ground truth produced by the procedural [`scene`] generator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod error;
pub mod grid;
pub mod kinematics;
pub mod losses;
pub mod masked;
pub mod metrics;
pub mod pipeline;
pub mod pnp;
pub mod prediction;
pub mod scene;
pub mod transforms;

pub use camera::{CoordMap, DepthMap, Intrinsics, PointMap};
pub use error::{Error, Result};
pub use grid::Grid;
pub use transforms::{NineD, RigidTransform, Rotation, Similarity, Transform3};
