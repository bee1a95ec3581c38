//! Procedural ground truth: a table-top scene with primitive objects and an
//! articulated arm drawn as capsules, viewed by randomly placed cameras and
//! rendered to depth, coordinate and mask rasters by analytic ray casting.
//!
//! The robot base sits at the world origin with z up, so world and robot
//! frames coincide and the similarity into the robot frame is the first
//! camera's pose with unit scale.

pub mod format;
pub mod mock;
pub mod raycast;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{coords_from_intrinsics, project, unproject, CoordMap, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kinematics::{keypoints_3d, link_segments, JointState, RobotModel};
use crate::masked::{LabelMap, MaskSet, Part};
use crate::pnp::{Heatmap, Keypoints2D};
use crate::prediction::{ScenePrediction, ViewPrediction};
use crate::transforms::{relative_pose, RigidTransform, Rotation, Similarity, Transform3};

use raycast::{Ray, Surface};

pub const DEFAULT_WIDTH: usize = 630;
pub const DEFAULT_HEIGHT: usize = 476;
/// Keypoint heatmaps are bumps of this width and peak; decoded at unit
/// temperature their softmax is about one pixel wide.
pub const HEATMAP_SIGMA: f64 = 10.0;
pub const HEATMAP_PEAK: f64 = 100.0;
pub const HEATMAP_TEMPERATURE: f64 = 1.0;
/// Tolerance of the rendered-geometry self-check, meters.
pub const CONSISTENCY_TOL: f64 = 1e-9;
/// Half side of the floor square, meters. A bounded floor keeps
/// near-horizontal rays from hitting it so far out that rounding in the hit
/// point exceeds `CONSISTENCY_TOL`.
pub const FLOOR_HALF_EXTENT: f64 = 5.0;
const MIN_KEYPOINT_MARGIN_PX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Box {
        pose: RigidTransform,
        half_extents: Vector3<f64>,
    },
}

impl Primitive {
    fn surface(&self) -> Surface {
        match *self {
            Primitive::Sphere { center, radius } => Surface::Sphere { center, radius },
            Primitive::Box { pose, half_extents } => Surface::Box { pose, half_extents },
        }
    }
}

/// Scene geometry. The table top is the rectangle `table` (`[x0, y0, x1, y1]`)
/// on `z = 0`; the floor is the square `|x|, |y| ≤ FLOOR_HALF_EXTENT` at
/// `z = floor_height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub table: [f64; 4],
    pub floor_height: f64,
    pub primitives: Vec<Primitive>,
    pub joint_state: JointState,
}

impl SceneSpec {
    /// Every renderable surface with its part label.
    pub fn surfaces(&self, robot: &RobotModel) -> Result<Vec<(Surface, Part)>> {
        let mut out = vec![
            (
                Surface::Plane {
                    height: 0.0,
                    bounds: Some(self.table),
                },
                Part::Background,
            ),
            (
                Surface::Plane {
                    height: self.floor_height,
                    bounds: Some([
                        -FLOOR_HALF_EXTENT,
                        -FLOOR_HALF_EXTENT,
                        FLOOR_HALF_EXTENT,
                        FLOOR_HALF_EXTENT,
                    ]),
                },
                Part::Background,
            ),
        ];
        out.extend(self.primitives.iter().map(|p| (p.surface(), Part::Object)));
        for (a, b) in link_segments(&robot.chain, &self.joint_state)? {
            out.push((
                Surface::Capsule {
                    a,
                    b,
                    radius: robot.chain.link_radius,
                },
                Part::Robot,
            ));
        }
        Ok(out)
    }
}

/// Spherical-shell camera placement around a workspace center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSampler {
    pub center: Vector3<f64>,
    /// Meters, `[min, max]`.
    pub radius: [f64; 2],
    /// Degrees above the horizontal, `[min, max]`.
    pub elevation_deg: [f64; 2],
    pub azimuth_deg: [f64; 2],
    /// Look-at target offset per axis, up to this many meters.
    pub target_jitter: f64,
    /// Roll about the optical axis, up to this many degrees either way.
    pub roll_deg: f64,
    /// Nominal focal length as a fraction of the image width.
    pub focal_factor: f64,
    /// Relative focal length perturbation.
    pub focal_jitter: f64,
    /// Principal point perturbation as a fraction of the image size.
    pub principal_jitter: f64,
}

impl Default for CameraSampler {
    fn default() -> Self {
        Self {
            center: Vector3::new(0.25, 0.0, 0.35),
            radius: [0.8, 1.6],
            elevation_deg: [20.0, 70.0],
            azimuth_deg: [-180.0, 180.0],
            target_jitter: 0.1,
            roll_deg: 10.0,
            focal_factor: 0.6,
            focal_jitter: 0.1,
            principal_jitter: 0.02,
        }
    }
}

impl CameraSampler {
    /// All ranges collapsed: the canonical camera looking straight at `center`.
    pub fn fixed(center: Vector3<f64>, radius: f64, elevation_deg: f64, azimuth_deg: f64) -> Self {
        Self {
            center,
            radius: [radius, radius],
            elevation_deg: [elevation_deg, elevation_deg],
            azimuth_deg: [azimuth_deg, azimuth_deg],
            target_jitter: 0.0,
            roll_deg: 0.0,
            focal_factor: 0.6,
            focal_jitter: 0.0,
            principal_jitter: 0.0,
        }
    }
}

/// `lo + u (hi − lo)` with `u` always drawn, so the stream position does not
/// depend on whether a range is collapsed.
fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    uniform(rng, -half_width, half_width)
}

/// Camera-to-world rotation looking along `forward` (z), with x to the right
/// and y pointing down in the image.
pub fn look_at(position: &Vector3<f64>, target: &Vector3<f64>) -> Result<Rotation> {
    let f = (target - position).normalize();
    let x = f.cross(&Vector3::z());
    if !(x.norm() > 1e-9) {
        return Err(Error::Degenerate("viewing direction is vertical".into()));
    }
    let x = x.normalize();
    let y = f.cross(&x);
    Rotation::from_matrix(Matrix3::from_columns(&[x, y, f]))
}

pub fn sample_camera(
    sampler: &CameraSampler,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> Result<(Intrinsics, RigidTransform)> {
    let r = uniform(rng, sampler.radius[0], sampler.radius[1]);
    let el = uniform(rng, sampler.elevation_deg[0], sampler.elevation_deg[1]).to_radians();
    let az = uniform(rng, sampler.azimuth_deg[0], sampler.azimuth_deg[1]).to_radians();
    let jitter = Vector3::new(
        symmetric(rng, sampler.target_jitter),
        symmetric(rng, sampler.target_jitter),
        symmetric(rng, sampler.target_jitter),
    );
    let roll = symmetric(rng, sampler.roll_deg).to_radians();
    let position = sampler.center + Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * r;
    let target = sampler.center + jitter;
    let rotation = look_at(&position, &target)?.compose(&Rotation::about_axis(&Vector3::z(), roll));

    let (w, h) = (width as f64, height as f64);
    let f = sampler.focal_factor * w;
    let fx = f * (1.0 + symmetric(rng, sampler.focal_jitter));
    let fy = f * (1.0 + symmetric(rng, sampler.focal_jitter));
    let cx = (w - 1.0) / 2.0 + w * symmetric(rng, sampler.principal_jitter);
    let cy = (h - 1.0) / 2.0 + h * symmetric(rng, sampler.principal_jitter);
    let k = Intrinsics::new(fx, fy, cx, cy, width, height)?;
    Ok((k, RigidTransform::new(rotation, position)))
}

/// Rendered rasters of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub depth: DepthMap,
    pub labels: LabelMap,
}

/// Casts the ray `R (x, y, 1)` from the camera center through every pixel;
/// its parameter at the nearest hit is the depth.
pub fn render(surfaces: &[(Surface, Part)], k: &Intrinsics, camera_to_world: &RigidTransform) -> ViewRender {
    let mut depth = Grid::filled(k.height, k.width, 0.0);
    let mut labels = Grid::filled(k.height, k.width, None);
    for v in 0..k.height {
        for u in 0..k.width {
            let c = k.normalize(u as f64, v as f64);
            let ray = Ray {
                origin: camera_to_world.translation,
                dir: camera_to_world.rotation.apply(&Vector3::new(c.x, c.y, 1.0)),
            };
            let mut best: Option<(f64, Part)> = None;
            for (surface, part) in surfaces {
                if let Some(t) = surface.intersect(&ray) {
                    if best.is_none_or(|(b, _)| t < b) {
                        best = Some((t, *part));
                    }
                }
            }
            if let Some((t, part)) = best {
                *depth.get_mut(v, u) = t;
                *labels.get_mut(v, u) = Some(part);
            }
        }
    }
    ViewRender {
        depth: DepthMap::new(depth),
        labels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    /// Views per scene, 1 or 2.
    pub cameras: usize,
    pub camera: CameraSampler,
    pub max_primitives: usize,
    /// Joint values are drawn from this fraction of each joint's range.
    pub joint_fraction: f64,
    /// Keypoints must project at least this fraction of the image width
    /// inside the border.
    pub keypoint_margin: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            cameras: 2,
            camera: CameraSampler::default(),
            max_primitives: 3,
            joint_fraction: 0.5,
            keypoint_margin: 0.02,
        }
    }
}

impl GenConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    /// Keypoint margin in pixels. The floor keeps every decoded heatmap
    /// bump far enough from the border that truncation does not bias it.
    pub fn margin_px(&self) -> f64 {
        (self.keypoint_margin * self.width as f64).max(MIN_KEYPOINT_MARGIN_PX)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.cameras) {
            return Err(Error::InvalidInput(format!(
                "camera count must be 1 or 2, got {}",
                self.cameras
            )));
        }
        if self.width < 3 || self.height < 3 {
            return Err(Error::InvalidInput("images must be at least 3x3".into()));
        }
        let s = &self.camera;
        if !(s.radius[0] > 0.0 && s.radius[0] <= s.radius[1])
            || !(s.elevation_deg[0] <= s.elevation_deg[1] && s.elevation_deg[1] < 90.0 && s.elevation_deg[0] > -90.0)
            || s.azimuth_deg[0] > s.azimuth_deg[1]
            || [s.target_jitter, s.roll_deg, s.focal_jitter, s.principal_jitter]
                .iter()
                .any(|v| !(*v >= 0.0))
            || !(s.focal_factor > 0.0)
            || s.focal_jitter >= 1.0
        {
            return Err(Error::InvalidInput("invalid camera sampling ranges".into()));
        }
        if !(0.0..0.5).contains(&self.keypoint_margin) {
            return Err(Error::InvalidInput("keypoint margin must lie in [0, 0.5)".into()));
        }
        if !(self.joint_fraction >= 0.0 && self.joint_fraction <= 1.0) {
            return Err(Error::InvalidInput("joint fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ground truth of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub intrinsics: Intrinsics,
    pub camera_to_world: RigidTransform,
    pub depth: DepthMap,
    pub coords: CoordMap,
    pub masks: MaskSet,
    pub labels: LabelMap,
    pub keypoints_2d: Keypoints2D,
}

impl ViewData {
    /// World-to-camera extrinsic.
    pub fn extrinsic(&self) -> RigidTransform {
        self.camera_to_world.inverse()
    }
}

/// One generated scene with everything needed to score a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub seed: u64,
    pub spec: SceneSpec,
    pub robot: RobotModel,
    pub views: Vec<ViewData>,
    /// First camera frame to robot base frame.
    pub similarity: Similarity,
    pub keypoints_3d: Vec<Vector3<f64>>,
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-scene seed derived from the run seed, independent of scheduling.
pub fn scene_seed(run_seed: u64, index: u64) -> u64 {
    scene_rng(run_seed, index).random()
}

pub fn sample_spec(seed: u64, config: &GenConfig, robot: &RobotModel) -> SceneSpec {
    let mut rng = scene_rng(seed, 0);
    let joint_state = JointState(
        robot
            .chain
            .joints
            .iter()
            .map(|j| {
                let [lo, hi] = j.limits.unwrap_or([-std::f64::consts::PI, std::f64::consts::PI]);
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo) * config.joint_fraction;
                uniform(&mut rng, mid - half, mid + half)
            })
            .collect(),
    );
    let count = 1 + rng.random_range(0..config.max_primitives.max(1));
    let primitives = (0..count)
        .map(|_| {
            let x = uniform(&mut rng, 0.3, 0.65);
            let y = uniform(&mut rng, -0.4, 0.4);
            let size = uniform(&mut rng, 0.03, 0.08);
            let yaw = uniform(&mut rng, -std::f64::consts::PI, std::f64::consts::PI);
            let aspect = Vector3::new(
                uniform(&mut rng, 0.6, 1.0),
                uniform(&mut rng, 0.6, 1.0),
                uniform(&mut rng, 0.6, 1.0),
            );
            if rng.random_bool(0.5) {
                Primitive::Sphere {
                    center: Vector3::new(x, y, size),
                    radius: size,
                }
            } else {
                let half_extents = aspect * size;
                Primitive::Box {
                    pose: RigidTransform::new(
                        Rotation::about_axis(&Vector3::z(), yaw),
                        Vector3::new(x, y, half_extents.z),
                    ),
                    half_extents,
                }
            }
        })
        .collect();
    SceneSpec {
        table: [-0.3, -0.7, 0.9, 0.7],
        floor_height: -0.75,
        primitives,
        joint_state,
    }
}

fn keypoints_visible(
    points: &[Vector3<f64>],
    k: &Intrinsics,
    extrinsic: &RigidTransform,
    margin: f64,
) -> Option<Keypoints2D> {
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let px = project(&extrinsic.apply(p), k).ok()?;
        let inside = px.x >= margin
            && px.y >= margin
            && px.x <= k.width as f64 - 1.0 - margin
            && px.y <= k.height as f64 - 1.0 - margin;
        if !inside {
            return None;
        }
        out.push(px);
    }
    Some(Keypoints2D(out))
}

const MAX_CAMERA_ATTEMPTS: usize = 1000;

/// Generates and renders one scene; a pure function of `(seed, config, robot)`.
pub fn generate_scene(seed: u64, config: &GenConfig, robot: &RobotModel) -> Result<SceneBundle> {
    config.validate()?;
    robot.validate()?;
    let spec = sample_spec(seed, config, robot);
    let keypoints = keypoints_3d(&robot.chain, &spec.joint_state, &robot.keypoints)?;
    let surfaces = spec.surfaces(robot)?;
    let mut views = Vec::with_capacity(config.cameras);
    for view in 0..config.cameras {
        let mut rng = scene_rng(seed, 1 + view as u64);
        let mut placed = None;
        for _ in 0..MAX_CAMERA_ATTEMPTS {
            let (k, pose) = sample_camera(&config.camera, config.width, config.height, &mut rng)?;
            if let Some(kp) = keypoints_visible(&keypoints, &k, &pose.inverse(), config.margin_px()) {
                placed = Some((k, pose, kp));
                break;
            }
        }
        let (k, pose, keypoints_2d) = placed.ok_or_else(|| {
            Error::Degenerate(format!(
                "no camera placement keeps all keypoints in view (scene seed {seed})"
            ))
        })?;
        let rendered = render(&surfaces, &k, &pose);
        views.push(ViewData {
            intrinsics: k,
            camera_to_world: pose,
            depth: rendered.depth,
            coords: coords_from_intrinsics(&k),
            masks: MaskSet::from_labels(&rendered.labels),
            labels: rendered.labels,
            keypoints_2d,
        });
    }
    let bundle = SceneBundle {
        seed,
        similarity: Similarity::from_rigid(views[0].camera_to_world),
        spec,
        robot: robot.clone(),
        views,
        keypoints_3d: keypoints,
    };
    let deviation = bundle.consistency_error()?;
    if deviation > CONSISTENCY_TOL {
        return Err(Error::Degenerate(format!(
            "rendered scene {seed} deviates from its surfaces by {deviation:e} m"
        )));
    }
    Ok(bundle)
}

impl SceneBundle {
    pub fn image_size(&self) -> (usize, usize) {
        self.views[0].depth.shape()
    }

    /// Pose of each view in the first view's frame; the first is exactly
    /// the identity.
    pub fn relative_poses(&self) -> Vec<RigidTransform> {
        let first = self.views[0].camera_to_world;
        std::iter::once(RigidTransform::identity())
            .chain(
                self.views[1..]
                    .iter()
                    .map(|v| relative_pose(&first, &v.camera_to_world)),
            )
            .collect()
    }

    /// Largest distance between a reconstructed robot-frame point and the
    /// analytic surface its pixel was labeled with, following
    /// unproject, register and canonicalize.
    pub fn consistency_error(&self) -> Result<f64> {
        let surfaces = self.spec.surfaces(&self.robot)?;
        let rels = self.relative_poses();
        let mut worst = 0.0f64;
        for (view, rel) in self.views.iter().zip(&rels) {
            let local = unproject(&view.coords, &view.depth)?;
            for (i, p) in local.iter_valid() {
                let Some(part) = view.labels.as_slice()[i] else {
                    return Err(Error::Malformed {
                        path: format!("scene {}", self.seed).into(),
                        reason: format!("valid depth at pixel {i} has no label"),
                    });
                };
                let world = self.similarity.apply(&rel.apply(p));
                let d = surfaces
                    .iter()
                    .filter(|(_, q)| *q == part)
                    .map(|(s, _)| s.distance(&world))
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
            }
        }
        Ok(worst)
    }

    /// Keypoint heatmap of the first view.
    pub fn heatmap(&self) -> Heatmap {
        let (h, w) = self.image_size();
        Heatmap::gaussian(h, w, &self.views[0].keypoints_2d, HEATMAP_SIGMA, HEATMAP_PEAK)
    }

    /// Ground truth in prediction form.
    pub fn ground_truth(&self) -> ScenePrediction {
        ScenePrediction {
            views: self
                .views
                .iter()
                .map(|v| ViewPrediction {
                    depth: v.depth.clone(),
                    coords: v.coords.clone(),
                    masks: v.masks.clone(),
                })
                .collect(),
            relative_poses: self.relative_poses(),
            similarity: self.similarity,
            heatmap: self.heatmap(),
            keypoints: self.views[0].keypoints_2d.clone(),
        }
    }
}
