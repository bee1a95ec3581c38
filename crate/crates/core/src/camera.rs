//! Pinhole camera model, depth/coordinate rasters and the unprojection that
//! turns them into camera-frame point maps.
//!
//! Pixel convention: integer pixel indices sample the image plane directly,
//! so pixel `(u, v)` has normalized coordinates `((u - cx) / fx, (v - cy) / fy)`
//! with no half-pixel offset.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Focal lengths must be positive and the principal point must lie on the
    /// closed image rectangle.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be finite and positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be non-zero".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Normalized image coordinates of pixel `(u, v)`.
    pub fn normalize(&self, u: f64, v: f64) -> Vector2<f64> {
        Vector2::new((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Grid<f64>,
    valid: Grid<bool>,
}

impl DepthMap {
    /// Non-finite or non-positive depths are marked invalid.
    pub fn new(values: Grid<f64>) -> Self {
        let valid = values.map(|d| d.is_finite() && *d > 0.0);
        Self { values, valid }
    }

    /// Explicit validity; every valid entry must hold a finite positive depth.
    pub fn with_validity(values: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        values.check_shape(&valid)?;
        if let Some(i) = values
            .iter()
            .zip(valid.iter())
            .position(|(d, ok)| *ok && !(d.is_finite() && *d > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "valid depth entry {i} is not finite and positive"
            )));
        }
        Ok(Self { values, valid })
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Applies `f` to every valid depth; results that are not finite and
    /// positive become invalid.
    pub fn map_valid(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let mut values = self.values.clone();
        let mut valid = self.valid.clone();
        for (i, (d, ok)) in values.as_mut_slice().iter_mut().zip(valid.as_mut_slice()).enumerate() {
            if *ok {
                *d = f(i, *d);
                *ok = d.is_finite() && *d > 0.0;
            }
        }
        Self { values, valid }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map_valid(|_, d| d * factor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordMap {
    values: Grid<Vector2<f64>>,
}

impl CoordMap {
    pub fn new(values: Grid<Vector2<f64>>) -> Result<Self> {
        if values.iter().any(|c| !(c.x.is_finite() && c.y.is_finite())) {
            return Err(Error::InvalidInput("coordinate map has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Grid<Vector2<f64>> {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

/// H×W camera- or world-frame points with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    values: Grid<Vector3<f64>>,
    valid: Grid<bool>,
}

impl PointMap {
    pub fn new(values: Grid<Vector3<f64>>, valid: Grid<bool>) -> Result<Self> {
        values.check_shape(&valid)?;
        Ok(Self { values, valid })
    }

    pub fn values(&self) -> &Grid<Vector3<f64>> {
        &self.values
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn point(&self, v: usize, u: usize) -> Option<&Vector3<f64>> {
        self.valid.get(v, u).then(|| self.values.get(v, u))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|ok| **ok).count()
    }

    /// `(flat index, point)` for every valid pixel in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> {
        self.values
            .iter()
            .zip(self.valid.iter())
            .enumerate()
            .filter_map(|(i, (p, ok))| ok.then_some((i, p)))
    }

    /// Maps every point (valid or not) through `f`, keeping validity.
    pub fn map_points(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            values: self.values.map(f),
            valid: self.valid.clone(),
        }
    }

    /// Same points with validity restricted to `keep`.
    pub fn restricted(&self, keep: &Grid<bool>) -> Result<Self> {
        self.valid.check_shape(keep)?;
        let valid = Grid::from_vec(
            self.valid.height(),
            self.valid.width(),
            self.valid.iter().zip(keep.iter()).map(|(a, b)| *a && *b).collect(),
        )?;
        Ok(Self {
            values: self.values.clone(),
            valid,
        })
    }
}

/// Scales each pixel's unit-depth ray `(x, y, 1)` by its depth.
pub fn unproject(coords: &CoordMap, depth: &DepthMap) -> Result<PointMap> {
    coords.values.check_shape(&depth.values)?;
    let (h, w) = depth.shape();
    let mut values = Vec::with_capacity(h * w);
    for (c, (d, ok)) in coords.values.iter().zip(depth.values.iter().zip(depth.valid.iter())) {
        values.push(if *ok {
            Vector3::new(c.x * d, c.y * d, *d)
        } else {
            Vector3::zeros()
        });
    }
    PointMap::new(Grid::from_vec(h, w, values)?, depth.valid.clone())
}

pub fn coords_from_intrinsics(k: &Intrinsics) -> CoordMap {
    CoordMap {
        values: Grid::from_fn(k.height, k.width, |v, u| k.normalize(u as f64, v as f64)),
    }
}

pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<Vector2<f64>> {
    if !(point.z > 0.0) {
        return Err(Error::PointBehindCamera { index: 0, z: point.z });
    }
    Ok(Vector2::new(
        k.fx * point.x / point.z + k.cx,
        k.fy * point.y / point.z + k.cy,
    ))
}

/// Least-squares pinhole intrinsics for a coordinate map. The x channel is an
/// affine function of the column index and the y channel of the row index, so
/// each pair `(fx, cx)` / `(fy, cy)` comes from an independent line fit.
pub fn intrinsics_from_coords(coords: &CoordMap) -> Result<Intrinsics> {
    let (h, w) = coords.shape();
    if h < 2 || w < 2 {
        return Err(Error::InvalidInput(format!(
            "coordinate map must be at least 2x2, got {h}x{w}"
        )));
    }
    let grid = &coords.values;
    let (slope_x, icpt_x) = line_fit((0..h).flat_map(|v| (0..w).map(move |u| (u as f64, grid.get(v, u).x))));
    let (slope_y, icpt_y) = line_fit((0..h).flat_map(|v| (0..w).map(move |u| (v as f64, grid.get(v, u).y))));
    let tiny = 1e-14;
    if !(slope_x > tiny && slope_y > tiny) {
        return Err(Error::Degenerate(format!(
            "coordinate map does not increase along the image axes (slopes {slope_x:e}, {slope_y:e})"
        )));
    }
    Intrinsics::new(1.0 / slope_x, 1.0 / slope_y, -icpt_x / slope_x, -icpt_y / slope_y, w, h)
}

/// Ordinary least-squares line `y = slope · t + intercept` (centered sums).
fn line_fit(samples: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let (n, sum_t, sum_y) = samples
        .clone()
        .fold((0.0, 0.0, 0.0), |(n, st, sy), (t, y)| (n + 1.0, st + t, sy + y));
    let (mean_t, mean_y) = (sum_t / n, sum_y / n);
    let (sxy, sxx) = samples.fold((0.0, 0.0), |(sxy, sxx), (t, y)| {
        let dt = t - mean_t;
        (sxy + dt * (y - mean_y), sxx + dt * dt)
    });
    let slope = sxy / sxx;
    (slope, mean_y - slope * mean_t)
}
