use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metric_recon::kinematics::RobotModel;
use metric_recon::pipeline::{
    check_grads, compose_points, eval_pointmap, eval_pose, gen_scenes, load_keypoints, load_weights, solve_pnp_bundle,
    write_report, KeypointSource, Report, RunConfig,
};
use metric_recon::Result;

#[derive(Parser)]
#[command(
    name = "metric-recon",
    version,
    about = "Metric-scale multi-view reconstruction toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural ground-truth scene bundles and a manifest.
    GenScenes {
        #[command(flatten)]
        run: RunArgs,
        /// Robot description (JSON); defaults to the built-in six-joint arm.
        #[arg(long)]
        robot: Option<PathBuf>,
        /// Output directory for bundles and manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Point-map metrics and losses of the mock predictor over a bundle tree.
    EvalPointmap {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding manifest.json.
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative and absolute pose metrics of the mock predictor.
    EvalPose {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover a view's extrinsic from the robot keypoints.
    SolvePnp {
        #[command(flatten)]
        run: RunArgs,
        /// Single bundle directory.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// JSON list of [u, v] pixels; defaults to decoding the bundle heatmap.
        #[arg(long)]
        keypoints: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose masked, labeled points from a mock prediction of one view.
    ComposePoints {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic loss gradient.
    CheckGrads {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Views per scene (1 or 2).
    #[arg(long)]
    cameras: Option<usize>,
    /// Depth noise σ, meters.
    #[arg(long)]
    noise_depth: Option<f64>,
    #[arg(long)]
    noise_coords: Option<f64>,
    /// Pose translation noise σ, meters.
    #[arg(long)]
    noise_translation: Option<f64>,
    /// Pose rotation noise σ, radians.
    #[arg(long)]
    noise_rotation: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    noise_heatmap_blur: Option<f64>,
    #[arg(long)]
    noise_mask_flip: Option<f64>,
    #[arg(long)]
    noise_keypoint_px: Option<f64>,
    #[arg(long)]
    threshold_rel_translation: Option<f64>,
    #[arg(long)]
    threshold_rel_rotation: Option<f64>,
    #[arg(long)]
    threshold_abs_translation: Option<f64>,
    #[arg(long)]
    threshold_abs_rotation: Option<f64>,
    #[arg(long)]
    mask_threshold: Option<f64>,
    #[arg(long)]
    grad_samples: Option<usize>,
    #[arg(long)]
    grad_tolerance: Option<f64>,
    /// Loss weights (JSON).
    #[arg(long)]
    weights_file: Option<PathBuf>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// JSON run configuration; its fields override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        set(&mut c.seed, self.seed);
        set(&mut c.scenes, self.scenes);
        set(&mut c.generation.width, self.width);
        set(&mut c.generation.height, self.height);
        set(&mut c.generation.cameras, self.cameras);
        set(&mut c.noise.depth, self.noise_depth);
        set(&mut c.noise.coords, self.noise_coords);
        set(&mut c.noise.translation, self.noise_translation);
        set(&mut c.noise.rotation, self.noise_rotation);
        set(&mut c.noise.scale, self.noise_scale);
        set(&mut c.noise.heatmap_blur, self.noise_heatmap_blur);
        set(&mut c.noise.mask_flip, self.noise_mask_flip);
        set(&mut c.noise.keypoint_px, self.noise_keypoint_px);
        set(&mut c.relative_thresholds.translation, self.threshold_rel_translation);
        set(&mut c.relative_thresholds.rotation, self.threshold_rel_rotation);
        set(&mut c.absolute_thresholds.translation, self.threshold_abs_translation);
        set(&mut c.absolute_thresholds.rotation, self.threshold_abs_rotation);
        set(&mut c.mask_threshold, self.mask_threshold);
        set(&mut c.grad_samples, self.grad_samples);
        set(&mut c.grad_tolerance, self.grad_tolerance);
        c.workers = self.workers;
        if let Some(path) = &self.weights_file {
            c.weights = load_weights(path)?;
        }
        if let Some(path) = &self.config {
            c = c.apply_file(path)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn finish<R: Report>(report: &R, out: &Path) -> Result<ExitCode> {
    write_report(report, out)?;
    print!("{}", report.render_text());
    if report.failures().is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in report.failures() {
            eprintln!("scene {} failed: {}", f.index, f.error);
        }
        Ok(ExitCode::FAILURE)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenScenes { run, robot, out } => {
            let config = run.resolve()?;
            let robot = match robot {
                Some(path) => RobotModel::load(&path)?,
                None => RobotModel::default_arm(),
            };
            let manifest = gen_scenes(&config, &robot, &out)?;
            print!("{}", manifest.render_text());
            if manifest.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &manifest.failures {
                    eprintln!("scene {} failed: {}", f.index, f.error);
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::EvalPointmap { run, bundles, out } => finish(&eval_pointmap(&run.resolve()?, &bundles)?, &out),
        Command::EvalPose { run, bundles, out } => finish(&eval_pose(&run.resolve()?, &bundles)?, &out),
        Command::SolvePnp {
            run,
            bundle,
            view,
            keypoints,
            out,
        } => {
            run.resolve()?;
            let source = match keypoints {
                Some(path) => KeypointSource::Explicit(load_keypoints(&path)?),
                None => KeypointSource::BundleHeatmap,
            };
            finish(&solve_pnp_bundle(&bundle, view, &source)?, &out)
        }
        Command::ComposePoints { run, bundle, view, out } => {
            finish(&compose_points(&run.resolve()?, &bundle, view, &out)?, &out)
        }
        Command::CheckGrads { run, out } => finish(&check_grads(&run.resolve()?)?, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
