use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BBox3d;

/// One pedestrian annotation in one frame. Serializes to one line of the
/// track-file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub scene_id: String,
    pub ped_id: String,
    pub frame: u64,
    #[serde(rename = "box")]
    pub bbox: BBox3d,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr: Option<usize>,
    #[serde(rename = "fps")]
    pub source_fps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackFormat {
    /// Per-frame 3D joint lists, boxed with [`box_from_keypoints`].
    JtaJoints,
    /// Boxes given directly.
    Boxes,
}

impl FromStr for TrackFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jta-joints" => Ok(TrackFormat::JtaJoints),
            "boxes" => Ok(TrackFormat::Boxes),
            other => Err(Error::arg(format!(
                "unknown track format {other:?} (expected jta-joints or boxes)"
            ))),
        }
    }
}

#[derive(Deserialize)]
struct RawLine {
    scene_id: String,
    ped_id: String,
    frame: u64,
    fps: f64,
    #[serde(rename = "box")]
    bbox: Option<BBox3d>,
    joints: Option<Vec<[f64; 3]>>,
    attr: Option<usize>,
}

/// Tight axis-aligned box around a set of joints (x→w, y→h, z→d).
pub fn box_from_keypoints(joints: &[[f64; 3]]) -> Result<BBox3d> {
    if joints.len() < 2 {
        return Err(Error::arg(format!("need at least 2 joints, got {}", joints.len())));
    }
    if joints.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("joint coordinate".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for j in joints {
        for k in 0..3 {
            lo[k] = lo[k].min(j[k]);
            hi[k] = hi[k].max(j[k]);
        }
    }
    let c: [f64; 3] = std::array::from_fn(|k| (lo[k] + hi[k]) / 2.0);
    let s: [f64; 3] = std::array::from_fn(|k| hi[k] - lo[k]);
    Ok(BBox3d::new(c[0], c[1], c[2], s[0], s[1], s[2]))
}

/// Parses track-file text. `origin` only labels error messages.
pub fn parse_tracks(text: &str, format: TrackFormat, origin: &Path) -> Result<Vec<TrackRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(line).map_err(|e| err(lineno, e.to_string()))?;
        if !(raw.fps > 0.0 && raw.fps.is_finite()) {
            return Err(err(lineno, format!("fps must be positive, got {}", raw.fps)));
        }
        let bbox = match format {
            TrackFormat::Boxes => raw.bbox.ok_or_else(|| err(lineno, "missing \"box\"".into()))?,
            TrackFormat::JtaJoints => {
                let joints = raw.joints.ok_or_else(|| err(lineno, "missing \"joints\"".into()))?;
                box_from_keypoints(&joints).map_err(|e| err(lineno, e.to_string()))?
            }
        };
        if !bbox.is_valid() {
            return Err(err(lineno, format!("invalid box {bbox:?}")));
        }
        if !seen.insert((raw.scene_id.clone(), raw.ped_id.clone(), raw.frame)) {
            return Err(err(
                lineno,
                format!(
                    "duplicate record for scene {:?}, pedestrian {:?}, frame {}",
                    raw.scene_id, raw.ped_id, raw.frame
                ),
            ));
        }
        out.push(TrackRecord {
            scene_id: raw.scene_id,
            ped_id: raw.ped_id,
            frame: raw.frame,
            bbox,
            attr: raw.attr,
            source_fps: raw.fps,
        });
    }
    sort_tracks(&mut out);
    Ok(out)
}

pub fn load_tracks(path: &Path, format: TrackFormat) -> Result<Vec<TrackRecord>> {
    let text = fs::read_to_string(path)?;
    parse_tracks(&text, format, path)
}

/// Sorts by `(scene, pedestrian, frame)`.
pub fn sort_tracks(tracks: &mut [TrackRecord]) {
    tracks.sort_by(|a, b| (&a.scene_id, &a.ped_id, a.frame).cmp(&(&b.scene_id, &b.ped_id, b.frame)));
}

pub fn write_tracks<W: Write>(mut w: W, tracks: &[TrackRecord]) -> Result<()> {
    for t in tracks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
