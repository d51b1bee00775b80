use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tracks::TrackRecord;
use crate::error::{Error, Result};
use crate::model::BBox3d;

/// One training or evaluation instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene_id: String,
    pub ped_id: String,
    pub start_frame: u64,
    pub obs: Vec<BBox3d>,
    pub future: Vec<BBox3d>,
    /// Present only when every future frame is labeled.
    pub attr_labels: Option<Vec<usize>>,
}

impl Sample {
    pub fn final_label(&self) -> Option<usize> {
        self.attr_labels.as_ref().and_then(|l| l.last().copied())
    }
}

/// An observation-only window used for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsWindow {
    pub scene_id: String,
    pub ped_id: String,
    pub start_frame: u64,
    pub last_frame: u64,
    pub obs: Vec<BBox3d>,
}

/// Window-length presets matching the native frame rates of the two
/// dataset layouts this crate ingests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowPreset {
    pub name: &'static str,
    pub fps: f64,
    pub t_obs: usize,
    pub t_pred: usize,
    pub stride: u64,
}

pub const PRESETS: [WindowPreset; 3] = [
    // 0.5 s observed, 0.5 s predicted at 30 fps.
    WindowPreset {
        name: "jta",
        fps: 30.0,
        t_obs: 15,
        t_pred: 15,
        stride: 1,
    },
    // 0.5 s observed, 2 s predicted at 30 fps.
    WindowPreset {
        name: "jta-long",
        fps: 30.0,
        t_obs: 15,
        t_pred: 60,
        stride: 1,
    },
    // 2 s observed, 2 s predicted at 2 fps.
    WindowPreset {
        name: "nuscenes",
        fps: 2.0,
        t_obs: 4,
        t_pred: 4,
        stride: 1,
    },
];

pub fn preset(name: &str) -> Option<WindowPreset> {
    PRESETS.iter().copied().find(|p| p.name == name)
}

type TrackKey<'a> = (&'a str, &'a str);

fn group_tracks(tracks: &[TrackRecord]) -> BTreeMap<TrackKey<'_>, BTreeMap<u64, &TrackRecord>> {
    let mut by_ped: BTreeMap<TrackKey<'_>, BTreeMap<u64, &TrackRecord>> = BTreeMap::new();
    for t in tracks {
        by_ped
            .entry((t.scene_id.as_str(), t.ped_id.as_str()))
            .or_default()
            .insert(t.frame, t);
    }
    by_ped
}

/// Every gap-free run of `len` frames spaced by `stride`, per pedestrian.
/// Start frames are those aligned with the pedestrian's first frame.
fn strided_runs<'a>(frames: &BTreeMap<u64, &'a TrackRecord>, len: usize, stride: u64) -> Vec<Vec<&'a TrackRecord>> {
    let Some(&first) = frames.keys().next() else {
        return Vec::new();
    };
    frames
        .keys()
        .filter(|&&f| (f - first) % stride == 0)
        .filter_map(|&start| {
            (0..len as u64)
                .map(|k| frames.get(&(start + k * stride)).copied())
                .collect::<Option<Vec<_>>>()
        })
        .collect()
}

/// Sliding windows of `t_obs + t_pred` frames.
pub fn window_samples(tracks: &[TrackRecord], t_obs: usize, t_pred: usize, stride: u64) -> Result<Vec<Sample>> {
    if t_obs < 2 || t_pred < 1 || stride < 1 {
        return Err(Error::arg(format!(
            "window needs t_obs >= 2, t_pred >= 1, stride >= 1 (got {t_obs}, {t_pred}, {stride})"
        )));
    }
    let mut out = Vec::new();
    for ((scene, ped), frames) in group_tracks(tracks) {
        for run in strided_runs(&frames, t_obs + t_pred, stride) {
            let (obs, future) = run.split_at(t_obs);
            let attr_labels = future.iter().map(|r| r.attr).collect::<Option<Vec<usize>>>();
            out.push(Sample {
                scene_id: scene.to_string(),
                ped_id: ped.to_string(),
                start_frame: run[0].frame,
                obs: obs.iter().map(|r| r.bbox).collect(),
                future: future.iter().map(|r| r.bbox).collect(),
                attr_labels,
            });
        }
    }
    Ok(out)
}

/// `(scene_id, ped_id)` of one pedestrian track.
pub type PedKey = (String, String);

/// Observation windows for inference, plus the keys of tracks too short to
/// yield any window.
pub fn observation_windows(tracks: &[TrackRecord], t_obs: usize, stride: u64) -> Result<(Vec<ObsWindow>, Vec<PedKey>)> {
    if t_obs < 2 || stride < 1 {
        return Err(Error::arg("observation window needs t_obs >= 2 and stride >= 1"));
    }
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for ((scene, ped), frames) in group_tracks(tracks) {
        let runs = strided_runs(&frames, t_obs, stride);
        if runs.is_empty() {
            skipped.push((scene.to_string(), ped.to_string()));
        }
        for run in runs {
            windows.push(ObsWindow {
                scene_id: scene.to_string(),
                ped_id: ped.to_string(),
                start_frame: run[0].frame,
                last_frame: run[run.len() - 1].frame,
                obs: run.iter().map(|r| r.bbox).collect(),
            });
        }
    }
    Ok((windows, skipped))
}

/// Undersamples every class down to the rarest one, keyed on the final
/// future label. Survivors keep their input order.
pub fn balance_classes(samples: Vec<Sample>, n_classes: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, s) in samples.iter().enumerate() {
        let label = s
            .final_label()
            .ok_or_else(|| Error::arg(format!("sample {i} has no attribute labels")))?;
        by_class
            .get_mut(label)
            .ok_or_else(|| Error::arg(format!("label {label} outside {n_classes} classes")))?
            .push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let target = counts.iter().copied().min().unwrap_or(0);
    if target == 0 {
        return Err(Error::arg(format!("cannot balance, class counts are {counts:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; samples.len()];
    for idx in &mut by_class {
        if idx.len() > target {
            idx.shuffle(&mut rng);
        }
        for &i in &idx[..target] {
            keep[i] = true;
        }
    }
    Ok(samples
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect())
}

/// Scene-level partition of tracks into train / validation / test.
#[derive(Clone, Debug, Default)]
pub struct SceneSplit {
    pub train: Vec<TrackRecord>,
    pub val: Vec<TrackRecord>,
    pub test: Vec<TrackRecord>,
}

/// Assigns whole scenes to splits so no window straddles two of them.
/// Fractions are of the scene count, rounded; the remainder goes to train.
pub fn split_by_scene(tracks: &[TrackRecord], val_frac: f64, test_frac: f64, seed: u64) -> Result<SceneSplit> {
    if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) || val_frac + test_frac >= 1.0 {
        return Err(Error::arg(format!(
            "split fractions must be in [0, 1) and sum below 1 (val {val_frac}, test {test_frac})"
        )));
    }
    let mut scenes: Vec<&str> = tracks.iter().map(|t| t.scene_id.as_str()).collect();
    scenes.sort_unstable();
    scenes.dedup();
    scenes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = scenes.len();
    let n_val = (n as f64 * val_frac).round() as usize;
    let n_test = ((n as f64 * test_frac).round() as usize).min(n - n_val);
    let val: std::collections::HashSet<&str> = scenes[..n_val].iter().copied().collect();
    let test: std::collections::HashSet<&str> = scenes[n_val..n_val + n_test].iter().copied().collect();
    let mut split = SceneSplit::default();
    for t in tracks {
        if val.contains(t.scene_id.as_str()) {
            split.val.push(t.clone());
        } else if test.contains(t.scene_id.as_str()) {
            split.test.push(t.clone());
        } else {
            split.train.push(t.clone());
        }
    }
    Ok(split)
}
