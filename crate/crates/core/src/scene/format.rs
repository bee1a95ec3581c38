//! On-disk scene bundles.
//!
//! A bundle is a directory holding `meta.json` (cameras, poses, similarity,
//! scene geometry, keypoints), `chain.json` (the robot description) and, per
//! view `i`, the rasters `view{i}_depth.bin`, `view{i}_depth_valid.bin`,
//! `view{i}_coords.bin`, `view{i}_masks.bin` and `view{i}_labels.bin`.
//!
//! Every raster starts with a 20-byte header: the magic `R3RB`, then
//! little-endian `u32` height, width, channel count and dtype tag
//! (1 = f32, 2 = f64, 3 = u8), followed by the row-major payload with
//! channels interleaved per pixel. Poses in metadata are row-major 4×4
//! matrices.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{SceneBundle, SceneSpec, ViewData};
use crate::camera::{CoordMap, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kinematics::RobotModel;
use crate::masked::{label_codes, MaskSet, Part};
use crate::pnp::Keypoints2D;
use crate::transforms::{RigidTransform, Similarity, Transform3};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 4] = b"R3RB";
pub const HEADER_LEN: usize = 20;
pub const META_FILE: &str = "meta.json";
pub const CHAIN_FILE: &str = "chain.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
}

impl Dtype {
    pub fn tag(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
            Dtype::U8 => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            3 => Some(Dtype::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

/// Decoded raster with samples widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

impl Raster {
    /// Channel `c` as a grid.
    pub fn plane(&self, c: usize) -> Grid<f64> {
        Grid::from_fn(self.height, self.width, |v, u| {
            self.data[(v * self.width + u) * self.channels + c]
        })
    }
}

pub fn encode_raster(height: usize, width: usize, channels: usize, dtype: Dtype, data: &[f64]) -> Vec<u8> {
    assert_eq!(data.len(), height * width * channels, "raster payload size");
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    for v in [height as u32, width as u32, channels as u32, dtype.tag()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in data {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
            Dtype::U8 => out.push(x as u8),
        }
    }
    out
}

pub fn decode_raster(bytes: &[u8], path: &Path) -> Result<Raster> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.into(),
        offset: bytes.len() as u64,
        expected: expected as u64,
    };
    if bytes.len() < MAGIC.len() {
        return Err(truncated(HEADER_LEN));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4-byte slice")) as usize;
    let (height, width, channels) = (word(0), word(1), word(2));
    let dtype = Dtype::from_tag(word(3) as u32).ok_or_else(|| Error::Malformed {
        path: path.into(),
        reason: format!("unknown dtype tag {}", word(3)),
    })?;
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Malformed {
            path: path.into(),
            reason: "raster dimensions overflow".into(),
        })?;
    let expected = HEADER_LEN + count * dtype.size();
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("{} trailing bytes after payload", bytes.len() - expected),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::U8 => payload.iter().map(|b| *b as f64).collect(),
    };
    Ok(Raster {
        height,
        width,
        channels,
        dtype,
        data,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.into() }
        } else {
            Error::io(path, e)
        }
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    decode_raster(&read_file(path)?, path)
}

fn expect_shape(raster: &Raster, path: &Path, shape: (usize, usize), channels: usize, dtype: Dtype) -> Result<()> {
    if (raster.height, raster.width) != shape || raster.channels != channels || raster.dtype != dtype {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!(
                "expected {}x{}x{} {:?}, found {}x{}x{} {:?}",
                shape.0, shape.1, channels, dtype, raster.height, raster.width, raster.channels, raster.dtype
            ),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewMeta {
    intrinsics: Intrinsics,
    camera_to_world: RigidTransform,
    camera_to_base: RigidTransform,
    keypoints_2d: Keypoints2D,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleMeta {
    format_version: u32,
    seed: u64,
    height: usize,
    width: usize,
    chain: String,
    spec: SceneSpec,
    similarity: Similarity,
    keypoints_3d: Vec<Vector3<f64>>,
    views: Vec<ViewMeta>,
}

/// Robot base pose in the world frame; the generator places it at the origin.
fn base_to_world() -> RigidTransform {
    RigidTransform::identity()
}

fn raster_path(dir: &Path, view: usize, name: &str) -> PathBuf {
    dir.join(format!("view{view}_{name}.bin"))
}

pub fn save_bundle(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (height, width) = bundle.image_size();
    let base_inv = base_to_world().inverse();
    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        seed: bundle.seed,
        height,
        width,
        chain: CHAIN_FILE.into(),
        spec: bundle.spec.clone(),
        similarity: bundle.similarity,
        keypoints_3d: bundle.keypoints_3d.clone(),
        views: bundle
            .views
            .iter()
            .map(|v| ViewMeta {
                intrinsics: v.intrinsics,
                camera_to_world: v.camera_to_world,
                camera_to_base: base_inv.compose(&v.camera_to_world),
                keypoints_2d: v.keypoints_2d.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("bundle metadata serializes");
    write_file(&dir.join(META_FILE), json.as_bytes())?;
    bundle.robot.save(&dir.join(CHAIN_FILE))?;

    for (i, v) in bundle.views.iter().enumerate() {
        let depth: Vec<f64> = v.depth.values().iter().copied().collect();
        let valid: Vec<f64> = v.depth.valid().iter().map(|b| *b as u8 as f64).collect();
        let coords: Vec<f64> = v.coords.values().iter().flat_map(|c| [c.x, c.y]).collect();
        let planes = Part::ALL.map(|p| v.masks.get(p));
        let masks: Vec<f64> = (0..height * width)
            .flat_map(|j| planes.map(|g| g.as_slice()[j]))
            .collect();
        let labels: Vec<f64> = label_codes(&v.labels).iter().map(|c| *c as f64).collect();
        let files = [
            ("depth", 1, Dtype::F64, depth),
            ("depth_valid", 1, Dtype::U8, valid),
            ("coords", 2, Dtype::F64, coords),
            ("masks", 3, Dtype::F32, masks),
            ("labels", 1, Dtype::U8, labels),
        ];
        for (name, channels, dtype, data) in files {
            write_file(
                &raster_path(dir, i, name),
                &encode_raster(height, width, channels, dtype, &data),
            )?;
        }
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<SceneBundle> {
    let meta_path = dir.join(META_FILE);
    let text = read_file(&meta_path)?;
    let value: serde_json::Value = serde_json::from_slice(&text).map_err(|e| Error::Malformed {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed {
            path: meta_path.clone(),
            reason: "missing format_version".into(),
        })?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let meta: BundleMeta = serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;
    if meta.views.is_empty() {
        return Err(Error::Malformed {
            path: meta_path,
            reason: "bundle has no views".into(),
        });
    }
    let robot = RobotModel::load(&dir.join(&meta.chain))?;
    let shape = (meta.height, meta.width);
    let base = base_to_world();

    let mut views = Vec::with_capacity(meta.views.len());
    for (i, vm) in meta.views.into_iter().enumerate() {
        let implied = base.compose(&vm.camera_to_base);
        let gap = (implied.translation - vm.camera_to_world.translation).norm()
            + (implied.rotation.matrix() - vm.camera_to_world.rotation.matrix()).norm();
        if gap > 1e-12 {
            return Err(Error::Malformed {
                path: meta_path.clone(),
                reason: format!("view {i}: world and base camera poses disagree"),
            });
        }
        if (vm.intrinsics.height, vm.intrinsics.width) != shape {
            return Err(Error::Malformed {
                path: meta_path.clone(),
                reason: format!("view {i}: intrinsics image size differs from bundle size"),
            });
        }
        let load = |name: &str, channels: usize, dtype: Dtype| -> Result<Raster> {
            let path = raster_path(dir, i, name);
            let raster = read_raster(&path)?;
            expect_shape(&raster, &path, shape, channels, dtype)?;
            Ok(raster)
        };
        let malformed = |name: &str, e: Error| Error::Malformed {
            path: raster_path(dir, i, name),
            reason: e.to_string(),
        };

        let depth_values = load("depth", 1, Dtype::F64)?.plane(0);
        let valid = load("depth_valid", 1, Dtype::U8)?.plane(0).map(|b| *b != 0.0);
        let depth = DepthMap::with_validity(depth_values, valid).map_err(|e| malformed("depth", e))?;
        let c = load("coords", 2, Dtype::F64)?;
        let coords = Grid::from_fn(shape.0, shape.1, |v, u| {
            let j = (v * shape.1 + u) * 2;
            Vector2::new(c.data[j], c.data[j + 1])
        });
        let coords = CoordMap::new(coords).map_err(|e| malformed("coords", e))?;
        let m = load("masks", 3, Dtype::F32)?;
        let masks = MaskSet::new(m.plane(0), m.plane(1), m.plane(2)).map_err(|e| malformed("masks", e))?;
        let codes = load("labels", 1, Dtype::U8)?.plane(0);
        if let Some(bad) = codes.iter().find(|c| **c > 3.0) {
            return Err(malformed(
                "labels",
                Error::InvalidInput(format!("unknown label code {bad}")),
            ));
        }
        let labels = codes.map(|c| Part::from_code(*c as u8));
        views.push(ViewData {
            intrinsics: vm.intrinsics,
            camera_to_world: vm.camera_to_world,
            depth,
            coords,
            masks,
            labels,
            keypoints_2d: vm.keypoints_2d,
        });
    }
    Ok(SceneBundle {
        seed: meta.seed,
        spec: meta.spec,
        robot,
        views,
        similarity: meta.similarity,
        keypoints_3d: meta.keypoints_3d,
    })
}
