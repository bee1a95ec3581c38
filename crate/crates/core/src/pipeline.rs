//! Reproducible batch runs behind the command-line tool: scene generation,
//! point-map and pose evaluation against the mock predictor, PnP solving,
//! masked point composition and gradient checks.
//!
//! Every run fans scenes out over a worker pool and collects results in
//! scene order, so reports are identical for any worker count. Reports echo
//! the full configuration except the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::losses::gradcheck::{check_all, GradReport};
use crate::losses::{total_loss, LossBreakdown, LossWeights};
use crate::masked::{compose_masked_points, Part, DEFAULT_MASK_THRESHOLD};
use crate::metrics::{
    absolute_pose_metrics, aggregate, point_map_metrics_views, relative_pose_metrics, AbsolutePoseReport,
    PointMapReport, PoseReport, Thresholds,
};
use crate::pnp::{solve_pnp, Keypoints2D, PnpSolution};
use crate::scene::format::{encode_raster, load_bundle, save_bundle, Dtype};
use crate::scene::mock::{mock_predict, NoiseModel};
use crate::scene::{generate_scene, scene_seed, GenConfig, SceneBundle};
use crate::transforms::{rotation_angle, Transform3};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
/// Default pass bound of `check-grads`.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Every tunable of a run. Flags fill it first, a config file overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenes: usize,
    pub generation: GenConfig,
    pub noise: NoiseModel,
    pub relative_thresholds: Thresholds,
    pub absolute_thresholds: Thresholds,
    pub weights: LossWeights,
    pub mask_threshold: f64,
    pub grad_samples: usize,
    pub grad_tolerance: f64,
    /// Scheduling only; never part of a report.
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 10,
            generation: GenConfig::default(),
            noise: NoiseModel::default(),
            relative_thresholds: Thresholds::relative_default(),
            absolute_thresholds: Thresholds::absolute_default(),
            weights: LossWeights::default(),
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            grad_samples: 64,
            grad_tolerance: GRAD_TOLERANCE,
            workers: None,
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.noise.validate()?;
        self.weights.validate()?;
        Thresholds::new(self.relative_thresholds.translation, self.relative_thresholds.rotation)?;
        Thresholds::new(self.absolute_thresholds.translation, self.absolute_thresholds.rotation)?;
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::InvalidInput("mask threshold must lie in (0, 1)".into()));
        }
        if !(self.grad_tolerance > 0.0 && self.grad_tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gradient tolerance must be positive, got {}",
                self.grad_tolerance
            )));
        }
        if self.grad_samples == 0 {
            return Err(Error::InvalidInput("gradient sample count must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidInput("worker count must be positive".into()));
        }
        Ok(())
    }

    /// Overrides fields with those present in a JSON object; nested objects
    /// merge key by key.
    pub fn overridden_by(&self, overlay: Value) -> Result<Self> {
        let workers = self.workers;
        let mut base = serde_json::to_value(self).expect("config serializes");
        let overlay_workers = overlay.get("workers").cloned();
        merge(&mut base, overlay);
        let mut out: RunConfig =
            serde_json::from_value(base).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        out.workers = match overlay_workers {
            Some(v) => serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("config workers: {e}")))?,
            None => workers,
        };
        Ok(out)
    }

    pub fn apply_file(&self, path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.into(),
            reason: e.to_string(),
        })?;
        self.overridden_by(value).map_err(|e| Error::Malformed {
            path: path.into(),
            reason: e.to_string(),
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            builder = builder.num_threads(n);
        }
        builder
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.into() }
        } else {
            Error::io(path, e)
        }
    })
}

pub fn load_weights(path: &Path) -> Result<LossWeights> {
    let w: LossWeights = serde_json::from_str(&read_text(path)?).map_err(|e| Error::Malformed {
        path: path.into(),
        reason: e.to_string(),
    })?;
    w.validate()?;
    Ok(w)
}

/// Seed of the mock prediction for scene `index`, on a stream disjoint from
/// the scene seeds.
pub fn prediction_seed(run_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream((1 << 48) | index as u64);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub index: usize,
    pub error: String,
}

/// Output of a run: machine-readable JSON plus a text rendering.
pub trait Report: Serialize {
    fn failures(&self) -> &[SceneFailure];
    fn render_text(&self) -> String;

    fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn write_report<R: Report>(report: &R, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let json = out.join(REPORT_JSON);
    fs::write(&json, report.to_json()).map_err(|e| Error::io(&json, e))?;
    let text = out.join(REPORT_TEXT);
    fs::write(&text, report.render_text()).map_err(|e| Error::io(&text, e))
}

fn failure_lines(out: &mut String, failures: &[SceneFailure]) {
    if !failures.is_empty() {
        let _ = writeln!(out, "failed scenes: {}", failures.len());
        for f in failures {
            let _ = writeln!(out, "  scene {}: {}", f.index, f.error);
        }
    }
}

type Indexed<T> = Vec<(usize, T)>;

/// Runs `job` for every index on the pool, keeping results in index order.
fn fan_out<T: Send>(
    config: &RunConfig,
    count: usize,
    job: impl Fn(usize) -> Result<T> + Sync,
) -> Result<(Indexed<T>, Vec<SceneFailure>)> {
    let results: Vec<Result<T>> = config
        .pool()?
        .install(|| (0..count).into_par_iter().map(&job).collect());
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((index, v)),
            Err(e) => failed.push(SceneFailure {
                index,
                error: e.to_string(),
            }),
        }
    }
    Ok((ok, failed))
}

// ---- gen-scenes ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    /// Bundle directory relative to the manifest.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub generation: GenConfig,
    pub scenes: Vec<ManifestEntry>,
    pub failures: Vec<SceneFailure>,
}

impl Report for Manifest {
    fn failures(&self) -> &[SceneFailure] {
        &self.failures
    }

    fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gen-scenes seed {}", self.seed);
        let _ = writeln!(
            s,
            "image {}x{}, {} camera(s)",
            self.generation.width, self.generation.height, self.generation.cameras
        );
        let _ = writeln!(s, "scenes written: {}", self.scenes.len());
        for e in &self.scenes {
            let _ = writeln!(s, "  {} seed {}", e.dir, e.seed);
        }
        failure_lines(&mut s, &self.failures);
        s
    }
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Generates `config.scenes` bundles under `out` and writes the manifest.
pub fn gen_scenes(config: &RunConfig, robot: &RobotModel, out: &Path) -> Result<Manifest> {
    config.validate()?;
    robot.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (ok, failures) = fan_out(config, config.scenes, |i| {
        let seed = scene_seed(config.seed, i as u64);
        let bundle = generate_scene(seed, &config.generation, robot)?;
        let dir = scene_dir_name(i);
        save_bundle(&bundle, &out.join(&dir))?;
        Ok(ManifestEntry { index: i, seed, dir })
    })?;
    let manifest = Manifest {
        seed: config.seed,
        generation: config.generation,
        scenes: ok.into_iter().map(|(_, e)| e).collect(),
        failures,
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Malformed {
        path,
        reason: e.to_string(),
    })
}

fn load_scene(root: &Path, entry: &ManifestEntry) -> Result<SceneBundle> {
    let bundle = load_bundle(&root.join(&entry.dir))?;
    if bundle.seed != entry.seed {
        return Err(Error::Malformed {
            path: root.join(&entry.dir),
            reason: format!("bundle seed {} differs from manifest seed {}", bundle.seed, entry.seed),
        });
    }
    Ok(bundle)
}

// ---- eval-pointmap -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMapScene {
    pub index: usize,
    pub seed: u64,
    pub metrics: PointMapReport,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMapSummary {
    pub metrics: PointMapReport,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMapEval {
    pub config: RunConfig,
    pub dataset_seed: u64,
    pub summary: Option<PointMapSummary>,
    pub scenes: Vec<PointMapScene>,
    pub failures: Vec<SceneFailure>,
}

fn mean_losses(all: &[LossBreakdown]) -> LossBreakdown {
    let n = all.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| all.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        point: sum(|l| l.point),
        normal: sum(|l| l.normal),
        mask: sum(|l| l.mask),
        rel: sum(|l| l.rel),
        st: sum(|l| l.st),
        kp: sum(|l| l.kp),
        total: sum(|l| l.total),
    }
}

impl Report for PointMapEval {
    fn failures(&self) -> &[SceneFailure] {
        &self.failures
    }

    fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "eval-pointmap seed {} over {} scene(s)",
            self.config.seed,
            self.scenes.len()
        );
        let _ = writeln!(
            s,
            "noise {}",
            serde_json::to_string(&self.config.noise).expect("noise serializes")
        );
        if let Some(sum) = &self.summary {
            let m = &sum.metrics;
            let _ = writeln!(s, "point error   {:.6e} m", m.point_err);
            let _ = writeln!(s, "normal error  {:.6e} rad", m.normal_err);
            let _ = writeln!(s, "scale error   {:.6e}", m.scale_err);
            for (name, v) in sum.losses.terms() {
                let _ = writeln!(s, "loss {name:<7} {v:.6e}");
            }
            let _ = writeln!(s, "loss total   {:.6e}", sum.losses.total);
        }
        failure_lines(&mut s, &self.failures);
        s
    }
}

pub fn eval_pointmap(config: &RunConfig, bundles: &Path) -> Result<PointMapEval> {
    config.validate()?;
    let manifest = load_manifest(bundles)?;
    let (ok, failures) = fan_out(config, manifest.scenes.len(), |i| {
        let entry = &manifest.scenes[i];
        let bundle = load_scene(bundles, entry)?;
        let gt = bundle.ground_truth();
        let pred = mock_predict(&bundle, &config.noise, prediction_seed(config.seed, entry.index))?;
        let metrics = point_map_metrics_views(
            &pred.registered_points()?,
            &gt.registered_points()?,
            pred.similarity.scale,
            gt.similarity.scale,
        )?;
        let losses = total_loss(&pred, &gt, &config.weights)?;
        Ok(PointMapScene {
            index: entry.index,
            seed: entry.seed,
            metrics,
            losses,
        })
    })?;
    let scenes: Vec<PointMapScene> = ok.into_iter().map(|(_, s)| s).collect();
    let summary = if scenes.is_empty() {
        None
    } else {
        let metrics: Vec<PointMapReport> = scenes.iter().map(|s| s.metrics).collect();
        let losses: Vec<LossBreakdown> = scenes.iter().map(|s| s.losses).collect();
        Some(PointMapSummary {
            metrics: aggregate(&metrics)?,
            losses: mean_losses(&losses),
        })
    };
    Ok(PointMapEval {
        config: config.clone(),
        dataset_seed: manifest.seed,
        summary,
        scenes,
        failures: remap_failures(failures, &manifest),
    })
}

/// Failure indices refer to manifest positions; report the scene indices.
fn remap_failures(failures: Vec<SceneFailure>, manifest: &Manifest) -> Vec<SceneFailure> {
    failures
        .into_iter()
        .map(|f| SceneFailure {
            index: manifest.scenes[f.index].index,
            error: f.error,
        })
        .collect()
}

// ---- eval-pose -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseScene {
    pub index: usize,
    pub seed: u64,
    pub relative: PoseReport,
    /// First camera in the base frame from the predicted similarity.
    pub absolute_similarity: AbsolutePoseReport,
    /// First camera in the base frame from PnP on the decoded keypoints.
    pub absolute_pnp: AbsolutePoseReport,
    pub pnp_reprojection_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSummary {
    pub relative: PoseReport,
    pub absolute_similarity: AbsolutePoseReport,
    pub absolute_pnp: AbsolutePoseReport,
    pub pnp_reprojection_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEval {
    pub config: RunConfig,
    pub dataset_seed: u64,
    pub summary: Option<PoseSummary>,
    pub scenes: Vec<PoseScene>,
    pub failures: Vec<SceneFailure>,
}

impl Report for PoseEval {
    fn failures(&self) -> &[SceneFailure] {
        &self.failures
    }

    fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "eval-pose seed {} over {} scene(s)",
            self.config.seed,
            self.scenes.len()
        );
        let _ = writeln!(
            s,
            "noise {}",
            serde_json::to_string(&self.config.noise).expect("noise serializes")
        );
        if let Some(sum) = &self.summary {
            let r = &sum.relative;
            let _ = writeln!(
                s,
                "relative   RTE {:.6e} m  RRE {:.6e} rad  RTA@{} {:.4}  RRA@{} {:.4}",
                r.rte, r.rre, r.thresholds.translation, r.rta, r.thresholds.rotation, r.rra
            );
            for (name, a) in [("similarity", &sum.absolute_similarity), ("pnp", &sum.absolute_pnp)] {
                let _ = writeln!(
                    s,
                    "absolute {name:<10} ATE {:.6e} m  ARE {:.6e} rad  ATA@{} {:.4}  ARA@{} {:.4}",
                    a.ate, a.are, a.thresholds.translation, a.ata, a.thresholds.rotation, a.ara
                );
            }
            let _ = writeln!(s, "pnp reprojection error {:.6e} px", sum.pnp_reprojection_error);
        }
        failure_lines(&mut s, &self.failures);
        s
    }
}

pub fn eval_pose(config: &RunConfig, bundles: &Path) -> Result<PoseEval> {
    config.validate()?;
    let manifest = load_manifest(bundles)?;
    let (ok, failures) = fan_out(config, manifest.scenes.len(), |i| {
        let entry = &manifest.scenes[i];
        let bundle = load_scene(bundles, entry)?;
        if bundle.views.len() < 2 {
            return Err(Error::InvalidInput("relative pose metrics need two views".into()));
        }
        let gt = bundle.ground_truth();
        let pred = mock_predict(&bundle, &config.noise, prediction_seed(config.seed, entry.index))?;
        let relative = relative_pose_metrics(
            &pred.relative_poses[1],
            &gt.relative_poses[1],
            config.relative_thresholds,
        );
        let gt_camera = bundle.views[0].camera_to_world;
        let absolute_similarity = absolute_pose_metrics(&pred.similarity.rigid, &gt_camera, config.absolute_thresholds);
        let pnp = solve_pnp(&bundle.keypoints_3d, &pred.keypoints, &bundle.views[0].intrinsics)?;
        let absolute_pnp = absolute_pose_metrics(&pnp.extrinsic.inverse(), &gt_camera, config.absolute_thresholds);
        Ok(PoseScene {
            index: entry.index,
            seed: entry.seed,
            relative,
            absolute_similarity,
            absolute_pnp,
            pnp_reprojection_error: pnp.reprojection_error,
        })
    })?;
    let scenes: Vec<PoseScene> = ok.into_iter().map(|(_, s)| s).collect();
    let summary = if scenes.is_empty() {
        None
    } else {
        let rel: Vec<PoseReport> = scenes.iter().map(|s| s.relative).collect();
        let sim: Vec<AbsolutePoseReport> = scenes.iter().map(|s| s.absolute_similarity).collect();
        let pnp: Vec<AbsolutePoseReport> = scenes.iter().map(|s| s.absolute_pnp).collect();
        Some(PoseSummary {
            relative: aggregate(&rel)?,
            absolute_similarity: aggregate(&sim)?,
            absolute_pnp: aggregate(&pnp)?,
            pnp_reprojection_error: scenes.iter().map(|s| s.pnp_reprojection_error).sum::<f64>() / scenes.len() as f64,
        })
    };
    Ok(PoseEval {
        config: config.clone(),
        dataset_seed: manifest.seed,
        summary,
        scenes,
        failures: remap_failures(failures, &manifest),
    })
}

// ---- solve-pnp -----------------------------------------------------------

/// Where the 2D keypoints come from.
#[derive(Debug, Clone, PartialEq)]
pub enum KeypointSource {
    /// Soft-argmax of the bundle's keypoint heatmap.
    BundleHeatmap,
    /// Explicit pixels, one `[u, v]` per keypoint.
    Explicit(Keypoints2D),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpReport {
    pub bundle: PathBuf,
    pub view: usize,
    pub keypoints: Keypoints2D,
    pub solution: PnpSolution,
    /// Distance of the recovered camera center from the stored one, meters.
    pub translation_error: f64,
    /// Angle between recovered and stored camera rotations, radians.
    pub rotation_error: f64,
}

impl Report for PnpReport {
    fn failures(&self) -> &[SceneFailure] {
        &[]
    }

    fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "solve-pnp {} view {}", self.bundle.display(), self.view);
        let m = self.solution.extrinsic.to_matrix4();
        let _ = writeln!(s, "extrinsic (base to camera):");
        for r in 0..4 {
            let _ = writeln!(
                s,
                "  {:>14.9} {:>14.9} {:>14.9} {:>14.9}",
                m[(r, 0)],
                m[(r, 1)],
                m[(r, 2)],
                m[(r, 3)]
            );
        }
        let _ = writeln!(s, "reprojection error {:.6e} px", self.solution.reprojection_error);
        let _ = writeln!(s, "iterations {}", self.solution.iterations);
        let _ = writeln!(
            s,
            "vs stored pose: translation {:.3e} m, rotation {:.3e} rad",
            self.translation_error, self.rotation_error
        );
        s
    }
}

pub fn load_keypoints(path: &Path) -> Result<Keypoints2D> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Malformed {
        path: path.into(),
        reason: e.to_string(),
    })
}

pub fn solve_pnp_bundle(bundle_dir: &Path, view: usize, source: &KeypointSource) -> Result<PnpReport> {
    let bundle = load_bundle(bundle_dir)?;
    let data = bundle.views.get(view).ok_or_else(|| {
        Error::InvalidInput(format!(
            "bundle has {} view(s), asked for view {view}",
            bundle.views.len()
        ))
    })?;
    let keypoints = match source {
        KeypointSource::Explicit(k) => k.clone(),
        KeypointSource::BundleHeatmap => {
            let (h, w) = bundle.image_size();
            let hm = crate::pnp::Heatmap::gaussian(
                h,
                w,
                &data.keypoints_2d,
                crate::scene::HEATMAP_SIGMA,
                crate::scene::HEATMAP_PEAK,
            );
            crate::pnp::soft_argmax(&hm, crate::scene::HEATMAP_TEMPERATURE)?
        }
    };
    let solution = solve_pnp(&bundle.keypoints_3d, &keypoints, &data.intrinsics)?;
    let stored = data.extrinsic();
    Ok(PnpReport {
        bundle: bundle_dir.into(),
        view,
        keypoints,
        translation_error: (solution.extrinsic.inverse().translation - stored.inverse().translation).norm(),
        rotation_error: rotation_angle(&solution.extrinsic.rotation, &stored.rotation),
        solution,
    })
}

// ---- compose-points ------------------------------------------------------

pub const POINTS_FILE: &str = "points.bin";
pub const LABELS_FILE: &str = "labels.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeReport {
    pub bundle: PathBuf,
    pub view: usize,
    pub config: RunConfig,
    pub points: usize,
    pub per_part: BTreeMap<Part, usize>,
}

impl Report for ComposeReport {
    fn failures(&self) -> &[SceneFailure] {
        &[]
    }

    fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "compose-points {} view {}", self.bundle.display(), self.view);
        let _ = writeln!(s, "mask threshold {}", self.config.mask_threshold);
        let _ = writeln!(s, "labeled points {}", self.points);
        for (part, n) in &self.per_part {
            let _ = writeln!(s, "  {part:?} {n}");
        }
        s
    }
}

/// Composes the mock prediction of one bundle view into a labeled point map
/// and writes it as a 3-channel f64 raster plus a label raster. Unlabeled
/// pixels hold NaN points and label 0.
pub fn compose_points(config: &RunConfig, bundle_dir: &Path, view: usize, out: &Path) -> Result<ComposeReport> {
    config.validate()?;
    let bundle = load_bundle(bundle_dir)?;
    if view >= bundle.views.len() {
        return Err(Error::InvalidInput(format!(
            "bundle has {} view(s), asked for view {view}",
            bundle.views.len()
        )));
    }
    let pred = mock_predict(&bundle, &config.noise, prediction_seed(config.seed, 0))?;
    let v = &pred.views[view];
    let composed = compose_masked_points(&v.depth, &v.coords, &v.masks, config.mask_threshold)?;

    let (h, w) = bundle.image_size();
    let mut points = vec![f64::NAN; h * w * 3];
    for (i, p) in composed.points.iter_valid() {
        points[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
    }
    let labels: Vec<f64> = composed.labels.iter().map(|l| l.map_or(0, Part::code) as f64).collect();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, channels, dtype, data) in [
        (POINTS_FILE, 3, Dtype::F64, points),
        (LABELS_FILE, 1, Dtype::U8, labels),
    ] {
        let path = out.join(name);
        fs::write(&path, encode_raster(h, w, channels, dtype, &data)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ComposeReport {
        bundle: bundle_dir.into(),
        view,
        config: config.clone(),
        points: composed.len(),
        per_part: Part::ALL.iter().map(|p| (*p, composed.count(*p))).collect(),
    })
}

// ---- check-grads ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub samples: usize,
    pub tolerance: f64,
    pub results: Vec<GradReport>,
    pub failures: Vec<SceneFailure>,
}

impl Report for GradCheckReport {
    fn failures(&self) -> &[SceneFailure] {
        &self.failures
    }

    fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "check-grads seed {} samples {} tolerance {:e}",
            self.seed, self.samples, self.tolerance
        );
        for r in &self.results {
            let verdict = if r.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<14} max rel error {:.3e} over {} coordinates  {verdict}",
                r.loss.name(),
                r.max_rel_error,
                r.coordinates
            );
        }
        failure_lines(&mut s, &self.failures);
        s
    }
}

pub fn check_grads(config: &RunConfig) -> Result<GradCheckReport> {
    let results = check_all(config.seed, config.grad_samples)?;
    let failures = results
        .iter()
        .enumerate()
        .filter(|(_, r)| !(r.max_rel_error < config.grad_tolerance))
        .map(|(index, r)| SceneFailure {
            index,
            error: format!("{} gradient relative error {:e}", r.loss, r.max_rel_error),
        })
        .collect();
    Ok(GradCheckReport {
        seed: config.seed,
        samples: config.grad_samples,
        tolerance: config.grad_tolerance,
        results,
        failures,
    })
}
