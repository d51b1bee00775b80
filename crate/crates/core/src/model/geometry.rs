use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pedestrian box in camera coordinates: center `(x, y, z)`
/// and extents `(w, h, d)` along x, y and z, all in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox3d {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub h: f64,
    pub d: f64,
}

/// Per-frame change of all six box elements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Velocity6 {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dw: f64,
    pub dh: f64,
    pub dd: f64,
}

impl BBox3d {
    pub const fn new(x: f64, y: f64, z: f64, w: f64, h: f64, d: f64) -> Self {
        BBox3d { x, y, z, w, h, d }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.w, self.h, self.d]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        BBox3d::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.w, self.h, self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Non-negative extents and finite entries.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.w >= 0.0 && self.h >= 0.0 && self.d >= 0.0
    }

    pub fn displaced(&self, v: &Velocity6) -> BBox3d {
        let a = self.to_array();
        let dv = v.to_array();
        BBox3d::from_array(std::array::from_fn(|i| a[i] + dv[i]))
    }
}

impl Velocity6 {
    pub const ZERO: Velocity6 = Velocity6 {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        dw: 0.0,
        dh: 0.0,
        dd: 0.0,
    };

    pub fn to_array(&self) -> [f64; 6] {
        [self.dx, self.dy, self.dz, self.dw, self.dh, self.dd]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Velocity6 {
            dx: a[0],
            dy: a[1],
            dz: a[2],
            dw: a[3],
            dh: a[4],
            dd: a[5],
        }
    }

    /// `to − from`, componentwise.
    pub fn between(from: &BBox3d, to: &BBox3d) -> Self {
        let (a, b) = (from.to_array(), to.to_array());
        Velocity6::from_array(std::array::from_fn(|i| b[i] - a[i]))
    }
}

/// Successive differences; one shorter than the input.
pub fn to_velocities(boxes: &[BBox3d]) -> Result<Vec<Velocity6>> {
    if boxes.len() < 2 {
        return Err(Error::arg(format!(
            "velocities need at least two boxes, got {}",
            boxes.len()
        )));
    }
    Ok(boxes.windows(2).map(|w| Velocity6::between(&w[0], &w[1])).collect())
}

/// Cumulative sum of `vels` starting from `anchor` (anchor itself excluded).
/// Negative extents are kept as computed; see [`invalid_boxes`].
pub fn integrate(anchor: &BBox3d, vels: &[Velocity6]) -> Vec<BBox3d> {
    let mut cur = *anchor;
    vels.iter()
        .map(|v| {
            cur = cur.displaced(v);
            cur
        })
        .collect()
}

/// Indices of boxes with a negative extent or non-finite entry.
pub fn invalid_boxes(boxes: &[BBox3d]) -> Vec<usize> {
    boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_valid())
        .map(|(i, _)| i)
        .collect()
}

/// Zero-velocity baseline: the last observed box repeated.
pub fn zero_vel_predict(window: &[BBox3d], t_pred: usize) -> Result<Vec<BBox3d>> {
    let last = window
        .last()
        .ok_or_else(|| Error::arg("zero-velocity baseline needs a non-empty window"))?;
    Ok(vec![*last; t_pred])
}
