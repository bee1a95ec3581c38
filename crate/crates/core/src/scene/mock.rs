//! Noise-injecting stand-in for the network: perturbs a bundle's ground
//! truth into a full prediction.
//!
//! Each component draws from its own ChaCha stream and consumes the same
//! random numbers whatever its noise level, so predictions at different
//! noise levels share their noise realizations (common random numbers) and
//! sweeps over one σ are monotone sample by sample.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SceneBundle, HEATMAP_PEAK, HEATMAP_SIGMA, HEATMAP_TEMPERATURE};
use crate::camera::CoordMap;
use crate::error::{Error, Result};
use crate::masked::{MaskSet, Part};
use crate::pnp::{soft_argmax, Heatmap, Keypoints2D};
use crate::prediction::{ScenePrediction, ViewPrediction};
use crate::transforms::{RigidTransform, Rotation, Similarity};

/// Standard deviations of the injected perturbations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Additive depth noise, meters.
    pub depth: f64,
    /// Additive noise on normalized image coordinates.
    pub coords: f64,
    /// Per-axis translation noise on relative poses and the similarity, meters.
    pub translation: f64,
    /// Rotation noise as a random rotation vector, per-axis radians.
    pub rotation: f64,
    /// Log-normal scale noise on the similarity.
    pub scale: f64,
    /// Extra heatmap bump width, pixels, added in quadrature.
    pub heatmap_blur: f64,
    /// Probability of flipping each mask entry `m ↦ 1 − m`.
    pub mask_flip: f64,
    /// Per-axis displacement of the heatmap bump centers, pixels.
    pub keypoint_px: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("depth", self.depth),
            ("coords", self.coords),
            ("translation", self.translation),
            ("rotation", self.rotation),
            ("scale", self.scale),
            ("heatmap_blur", self.heatmap_blur),
            ("mask_flip", self.mask_flip),
            ("keypoint_px", self.keypoint_px),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "noise {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.mask_flip > 1.0 {
            return Err(Error::InvalidInput("mask flip rate must not exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Depth = 1,
    Coords,
    Masks,
    Poses,
    Similarity,
    Keypoints,
}

fn stream(seed: u64, which: Stream, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | view as u64);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng))
}

/// `(Exp(σ_r n) R, t + σ_t n)`.
pub fn perturb_pose(pose: &RigidTransform, sigma_t: f64, sigma_r: f64, rng: &mut impl Rng) -> RigidTransform {
    let dr = normal3(rng) * sigma_r;
    let dt = normal3(rng) * sigma_t;
    RigidTransform::new(Rotation::exp(&dr).compose(&pose.rotation), pose.translation + dt)
}

/// Builds a prediction from `bundle`; a zero noise model reproduces the
/// ground truth rasters, poses and similarity exactly.
pub fn mock_predict(bundle: &SceneBundle, noise: &NoiseModel, seed: u64) -> Result<ScenePrediction> {
    noise.validate()?;
    let gt = bundle.ground_truth();

    let views = gt
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut rng = stream(seed, Stream::Depth, i);
            let n: Vec<f64> = (0..v.depth.values().len()).map(|_| normal(&mut rng)).collect();
            let depth = v.depth.map_valid(|j, d| d + noise.depth * n[j]);

            let mut rng = stream(seed, Stream::Coords, i);
            let coords = v.coords.values().map(|c| {
                let n = Vector2::new(normal(&mut rng), normal(&mut rng));
                c + n * noise.coords
            });

            let mut rng = stream(seed, Stream::Masks, i);
            let mut masks = v.masks.clone();
            for part in Part::ALL {
                for m in masks.get_mut(part).as_mut_slice() {
                    let u: f64 = rng.random();
                    if u < noise.mask_flip {
                        *m = 1.0 - *m;
                    }
                }
            }
            let masks = MaskSet::new(
                masks.get(Part::Robot).clone(),
                masks.get(Part::Object).clone(),
                masks.get(Part::Background).clone(),
            )?;
            ViewPrediction::new(depth, CoordMap::new(coords)?, masks)
        })
        .collect::<Result<Vec<_>>>()?;

    let relative_poses = gt
        .relative_poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                *p
            } else {
                perturb_pose(
                    p,
                    noise.translation,
                    noise.rotation,
                    &mut stream(seed, Stream::Poses, i),
                )
            }
        })
        .collect();

    let mut rng = stream(seed, Stream::Similarity, 0);
    let rigid = perturb_pose(&gt.similarity.rigid, noise.translation, noise.rotation, &mut rng);
    let scale = gt.similarity.scale * (noise.scale * normal(&mut rng)).exp();
    let similarity = Similarity::new(scale, rigid)?;

    let mut rng = stream(seed, Stream::Keypoints, 0);
    let centers = Keypoints2D(
        gt.keypoints
            .0
            .iter()
            .map(|c| c + Vector2::new(normal(&mut rng), normal(&mut rng)) * noise.keypoint_px)
            .collect(),
    );
    let (h, w) = bundle.image_size();
    let heatmap = if noise.heatmap_blur == 0.0 && noise.keypoint_px == 0.0 {
        gt.heatmap
    } else {
        let sigma = HEATMAP_SIGMA.hypot(noise.heatmap_blur);
        Heatmap::gaussian(h, w, &centers, sigma, HEATMAP_PEAK)
    };
    let keypoints = soft_argmax(&heatmap, HEATMAP_TEMPERATURE)?;

    Ok(ScenePrediction {
        views,
        relative_poses,
        similarity,
        heatmap,
        keypoints,
    })
}
