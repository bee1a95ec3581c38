//! Masked point composition: per-part masks select which unprojected pixels
//! survive, and every surviving point carries the label of its part.

use serde::{Deserialize, Serialize};

use crate::camera::{unproject, CoordMap, DepthMap, PointMap};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

/// Scene part, in tie-breaking priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Robot,
    Object,
    Background,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Robot, Part::Object, Part::Background];

    /// Raster code; `0` is reserved for unlabeled pixels.
    pub fn code(self) -> u8 {
        match self {
            Part::Robot => 1,
            Part::Object => 2,
            Part::Background => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Part> {
        match code {
            1 => Some(Part::Robot),
            2 => Some(Part::Object),
            3 => Some(Part::Background),
            _ => None,
        }
    }
}

pub type LabelMap = Grid<Option<Part>>;

pub fn label_codes(labels: &LabelMap) -> Grid<u8> {
    labels.map(|l| l.map_or(0, Part::code))
}

/// Independent per-part probabilities (robot, object, background).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    robot: Grid<f64>,
    object: Grid<f64>,
    background: Grid<f64>,
}

impl MaskSet {
    pub fn new(robot: Grid<f64>, object: Grid<f64>, background: Grid<f64>) -> Result<Self> {
        robot.check_shape(&object)?;
        robot.check_shape(&background)?;
        for (part, grid) in [("robot", &robot), ("object", &object), ("background", &background)] {
            if let Some(bad) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidInput(format!("{part} mask entry {bad} outside [0, 1]")));
            }
        }
        Ok(Self {
            robot,
            object,
            background,
        })
    }

    /// Hard 0/1 masks from a label map.
    pub fn from_labels(labels: &LabelMap) -> Self {
        let hard = |part: Part| labels.map(|l| if *l == Some(part) { 1.0 } else { 0.0 });
        Self {
            robot: hard(Part::Robot),
            object: hard(Part::Object),
            background: hard(Part::Background),
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        let z = Grid::filled(height, width, 0.0);
        Self {
            robot: z.clone(),
            object: z.clone(),
            background: z,
        }
    }

    pub fn get(&self, part: Part) -> &Grid<f64> {
        match part {
            Part::Robot => &self.robot,
            Part::Object => &self.object,
            Part::Background => &self.background,
        }
    }

    pub fn get_mut(&mut self, part: Part) -> &mut Grid<f64> {
        match part {
            Part::Robot => &mut self.robot,
            Part::Object => &mut self.object,
            Part::Background => &mut self.background,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.robot.shape()
    }
}

/// Labels each pixel with the most probable part among those strictly above
/// `threshold`; equal probabilities resolve robot, then object, then background.
pub fn binarize(masks: &MaskSet, threshold: f64) -> Result<LabelMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "mask threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let (h, w) = masks.shape();
    Ok(Grid::from_fn(h, w, |v, u| {
        let mut best: Option<(Part, f64)> = None;
        for part in Part::ALL {
            let p = *masks.get(part).get(v, u);
            if p > threshold && best.is_none_or(|(_, q)| p > q) {
                best = Some((part, p));
            }
        }
        best.map(|(part, _)| part)
    }))
}

/// A composed point map whose valid pixels each carry one part label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: PointMap,
    pub labels: LabelMap,
}

impl LabeledPoints {
    pub fn len(&self) -> usize {
        self.points.valid_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, part: Part) -> usize {
        self.points
            .iter_valid()
            .filter(|(i, _)| self.labels.as_slice()[*i] == Some(part))
            .count()
    }
}

/// Unprojects, masks and merges all parts into one labeled point map.
pub fn compose_masked_points(
    depth: &DepthMap,
    coords: &CoordMap,
    masks: &MaskSet,
    threshold: f64,
) -> Result<LabeledPoints> {
    depth.values().check_shape(masks.get(Part::Robot))?;
    let points = unproject(coords, depth)?;
    let labels = binarize(masks, threshold)?;
    let keep = labels.map(Option::is_some);
    let points = points.restricted(&keep)?;
    // labels only where a point survived
    let labels = Grid::from_vec(
        labels.height(),
        labels.width(),
        labels
            .iter()
            .zip(points.valid().iter())
            .map(|(l, ok)| if *ok { *l } else { None })
            .collect(),
    )?;
    Ok(LabeledPoints { points, labels })
}
