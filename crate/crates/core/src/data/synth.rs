//! Seeded synthetic pedestrian tracks.
//!
//! Pedestrians walk on the camera's x-z ground plane. Each track follows one
//! regime (constant velocity, stop-and-go, turning, standing) and carries a
//! per-frame action label derived from its noise-free speed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tracks::TrackRecord;
use crate::error::{Error, Result};
use crate::model::BBox3d;

pub const ATTR_MOVING: usize = 0;
pub const ATTR_STANDING: usize = 1;
pub const ATTR_SITTING: usize = 2;
pub const ATTR_NAMES: [&str; 3] = ["moving", "standing", "sitting"];

/// Below this ground speed (m/s) a pedestrian is labeled standing.
pub const STANDING_SPEED: f64 = 0.2;

/// Height scale applied to seated pedestrians.
const SITTING_HEIGHT_SCALE: f64 = 0.55;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeMix {
    pub constant_velocity: f64,
    pub stop_and_go: f64,
    pub turning: f64,
    pub standing: f64,
}

impl Default for RegimeMix {
    fn default() -> Self {
        RegimeMix {
            constant_velocity: 0.4,
            stop_and_go: 0.2,
            turning: 0.2,
            standing: 0.2,
        }
    }
}

impl RegimeMix {
    fn weights(&self) -> [f64; 4] {
        [self.constant_velocity, self.stop_and_go, self.turning, self.standing]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    ConstantVelocity,
    StopAndGo,
    Turning,
    Standing,
}

/// Generator settings; readable from a TOML key-value file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_tracks: usize,
    pub fps: f64,
    /// Seconds per track.
    pub duration: f64,
    pub mix: RegimeMix,
    /// Fraction of standing-regime pedestrians that are seated (label 2).
    pub sitting_fraction: f64,
    /// Ground speed range, m/s.
    pub speed: [f64; 2],
    /// Turning rate magnitude range, rad/s.
    pub turn_rate: [f64; 2],
    /// Stop-and-go phase lengths, seconds.
    pub move_phase: [f64; 2],
    pub stop_phase: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
    pub depth: [f64; 2],
    /// Standard deviation of the Gaussian noise on box centers, meters.
    pub noise_sigma: f64,
    pub tracks_per_scene: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_tracks: 100,
            fps: 2.0,
            duration: 10.0,
            mix: RegimeMix::default(),
            sitting_fraction: 0.0,
            speed: [0.5, 1.5],
            turn_rate: [0.2, 0.6],
            move_phase: [1.0, 3.0],
            stop_phase: [0.5, 2.0],
            width: [0.4, 0.7],
            height: [1.5, 1.9],
            depth: [0.3, 0.6],
            noise_sigma: 0.0,
            tracks_per_scene: 10,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(Error::arg(format!("{name} range {r:?} is invalid")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.mix.weights();
        if w.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::arg(format!(
                "regime proportions must be non-negative, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("regime proportions sum to {sum}, expected 1")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg("noise_sigma must be non-negative"));
        }
        if !(self.fps > 0.0 && self.duration > 0.0) {
            return Err(Error::arg("fps and duration must be positive"));
        }
        if self.n_frames() == 0 {
            return Err(Error::arg("duration × fps yields no frames"));
        }
        if !(0.0..=1.0).contains(&self.sitting_fraction) {
            return Err(Error::arg("sitting_fraction must lie in [0, 1]"));
        }
        if self.tracks_per_scene == 0 {
            return Err(Error::arg("tracks_per_scene must be positive"));
        }
        check_range("speed", self.speed, 0.0)?;
        check_range("turn_rate", self.turn_rate, 0.0)?;
        check_range("move_phase", self.move_phase, 1e-9)?;
        check_range("stop_phase", self.stop_phase, 1e-9)?;
        check_range("width", self.width, 0.0)?;
        check_range("height", self.height, 0.0)?;
        check_range("depth", self.depth, 0.0)?;
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn pick_regime<R: Rng>(rng: &mut R, mix: &RegimeMix) -> Regime {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let regimes = [
        Regime::ConstantVelocity,
        Regime::StopAndGo,
        Regime::Turning,
        Regime::Standing,
    ];
    for (regime, w) in regimes.iter().zip(mix.weights()) {
        acc += w;
        if u < acc {
            return *regime;
        }
    }
    // Rounding at the top of the cumulative sum: last regime with weight.
    regimes
        .iter()
        .zip(mix.weights())
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map(|(r, _)| *r)
        .unwrap_or(Regime::Standing)
}

/// Ground-plane path of one track: noise-free centers and per-frame labels.
struct Path {
    xz: Vec<[f64; 2]>,
    labels: Vec<usize>,
}

fn simulate<R: Rng>(rng: &mut R, spec: &SynthSpec, regime: Regime, seated: bool) -> Path {
    let n = spec.n_frames();
    let dt = 1.0 / spec.fps;
    let mut pos = [rng.random_range(-8.0..8.0), rng.random_range(6.0..25.0)];
    let mut heading = rng.random_range(0.0..2.0 * PI);
    let speed = uniform(rng, spec.speed);
    let label_for = |s: f64| if s < STANDING_SPEED { ATTR_STANDING } else { ATTR_MOVING };

    let mut xz = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    match regime {
        Regime::ConstantVelocity => {
            let step = [speed * dt * heading.cos(), speed * dt * heading.sin()];
            for _ in 0..n {
                xz.push(pos);
                labels.push(label_for(speed));
                pos = [pos[0] + step[0], pos[1] + step[1]];
            }
        }
        Regime::Turning => {
            let omega = uniform(rng, spec.turn_rate) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for _ in 0..n {
                xz.push(pos);
                labels.push(label_for(speed));
                pos = [pos[0] + speed * dt * heading.cos(), pos[1] + speed * dt * heading.sin()];
                heading += omega * dt;
            }
        }
        Regime::StopAndGo => {
            let mut moving = rng.random_bool(0.5);
            let mut left = uniform(rng, if moving { spec.move_phase } else { spec.stop_phase });
            for _ in 0..n {
                let s = if moving { speed } else { 0.0 };
                xz.push(pos);
                labels.push(label_for(s));
                pos = [pos[0] + s * dt * heading.cos(), pos[1] + s * dt * heading.sin()];
                left -= dt;
                if left <= 0.0 {
                    moving = !moving;
                    left = uniform(rng, if moving { spec.move_phase } else { spec.stop_phase });
                }
            }
        }
        Regime::Standing => {
            let label = if seated { ATTR_SITTING } else { label_for(0.0) };
            xz = vec![pos; n];
            labels = vec![label; n];
        }
    }
    Path { xz, labels }
}

/// Deterministic track set: track `i` draws from stream `i` of `spec.seed`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<TrackRecord>> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.n_tracks * spec.n_frames());
    for i in 0..spec.n_tracks {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let regime = pick_regime(&mut rng, &spec.mix);
        let seated = regime == Regime::Standing && rng.random::<f64>() < spec.sitting_fraction;
        let w = uniform(&mut rng, spec.width);
        let standing_h = uniform(&mut rng, spec.height);
        let d = uniform(&mut rng, spec.depth);
        // Camera y points down; keep the feet on the ground when seated.
        let feet_y = rng.random_range(1.2..1.8);
        let h = if seated {
            standing_h * SITTING_HEIGHT_SCALE
        } else {
            standing_h
        };
        let y = feet_y - h / 2.0;
        let path = simulate(&mut rng, spec, regime, seated);
        let scene_id = format!("synth-{:04}", i / spec.tracks_per_scene);
        let ped_id = format!("ped-{i:05}");
        for (frame, (p, label)) in path.xz.iter().zip(&path.labels).enumerate() {
            let (mut bx, mut by, mut bz) = (p[0], y, p[1]);
            if spec.noise_sigma > 0.0 {
                bx += noise.sample(&mut rng);
                by += noise.sample(&mut rng);
                bz += noise.sample(&mut rng);
            }
            out.push(TrackRecord {
                scene_id: scene_id.clone(),
                ped_id: ped_id.clone(),
                frame: frame as u64,
                bbox: BBox3d::new(bx, by, bz, w, h, d),
                attr: Some(*label),
                source_fps: spec.fps,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::to_velocities;

    fn only(regime: &str) -> SynthSpec {
        let mut mix = RegimeMix {
            constant_velocity: 0.0,
            stop_and_go: 0.0,
            turning: 0.0,
            standing: 0.0,
        };
        match regime {
            "cv" => mix.constant_velocity = 1.0,
            "sag" => mix.stop_and_go = 1.0,
            "turn" => mix.turning = 1.0,
            _ => mix.standing = 1.0,
        }
        SynthSpec {
            n_tracks: 20,
            mix,
            ..Default::default()
        }
    }

    fn per_track(recs: &[TrackRecord]) -> Vec<Vec<BBox3d>> {
        let mut out: Vec<Vec<BBox3d>> = Vec::new();
        for (i, r) in recs.iter().enumerate() {
            if i == 0 || recs[i - 1].ped_id != r.ped_id {
                out.push(Vec::new());
            }
            out.last_mut().unwrap().push(r.bbox);
        }
        out
    }

    #[test]
    fn constant_velocity_kinematics() {
        let spec = SynthSpec {
            speed: [1.0, 1.0],
            ..only("cv")
        };
        let recs = synth_generate(&spec).unwrap();
        for track in per_track(&recs) {
            for pair in track.windows(2) {
                let dx = pair[1].x - pair[0].x;
                let dz = pair[1].z - pair[0].z;
                assert!(((dx * dx + dz * dz).sqrt() - 0.5).abs() < 1e-12);
            }
            let v = to_velocities(&track).unwrap();
            for w in v.windows(2) {
                for (a, b) in w[0].to_array().iter().zip(w[1].to_array()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        assert!(recs.iter().all(|r| r.attr == Some(ATTR_MOVING)));
    }

    #[test]
    fn standing_is_stationary_and_seated_is_shorter() {
        let recs = synth_generate(&SynthSpec {
            sitting_fraction: 0.5,
            ..only("stand")
        })
        .unwrap();
        let mut seen = [0usize; 3];
        for (track, r0) in per_track(&recs).iter().zip(recs.iter().step_by(20)) {
            assert!(track.iter().all(|b| b == &track[0]));
            let label = r0.attr.unwrap();
            seen[label] += 1;
            if label == ATTR_SITTING {
                assert!(track[0].h < 1.1);
            } else {
                assert_eq!(label, ATTR_STANDING);
                assert!(track[0].h >= 1.5);
            }
        }
        assert!(seen[ATTR_SITTING] > 0 && seen[ATTR_STANDING] > 0);
    }

    #[test]
    fn stop_and_go_has_both_phases() {
        let recs = synth_generate(&only("sag")).unwrap();
        assert!(recs.iter().any(|r| r.attr == Some(ATTR_MOVING)));
        assert!(recs.iter().any(|r| r.attr == Some(ATTR_STANDING)));
    }

    #[test]
    fn turning_changes_heading() {
        let recs = synth_generate(&only("turn")).unwrap();
        for track in per_track(&recs) {
            let v = to_velocities(&track).unwrap();
            let cross = v[0].dx * v[5].dz - v[0].dz * v[5].dx;
            assert!(cross.abs() > 1e-6);
        }
    }

    #[test]
    fn deterministic_and_independent_per_track() {
        let spec = SynthSpec {
            noise_sigma: 0.05,
            ..Default::default()
        };
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a, synth_generate(&spec).unwrap());
        let longer = synth_generate(&SynthSpec {
            n_tracks: 150,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(&longer[..a.len()], &a[..]);
        let other = synth_generate(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn validation() {
        let bad = SynthSpec {
            mix: RegimeMix {
                constant_velocity: 0.5,
                stop_and_go: 0.2,
                turning: 0.1,
                standing: 0.1,
            },
            ..Default::default()
        };
        assert!(synth_generate(&bad).is_err());
        assert!(synth_generate(&SynthSpec {
            noise_sigma: -1.0,
            ..Default::default()
        })
        .is_err());
        assert!(synth_generate(&SynthSpec {
            speed: [2.0, 1.0],
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            n_tracks = 3
            fps = 2.0
            duration = 4.0
            noise_sigma = 0.01
            speed = [0.5, 1.5]
            seed = 42
            [mix]
            constant_velocity = 1.0
            stop_and_go = 0.0
            turning = 0.0
            standing = 0.0
        "#;
        let spec = SynthSpec::from_toml(text).unwrap();
        assert_eq!(spec.n_tracks, 3);
        assert_eq!(spec.n_frames(), 8);
        assert_eq!(synth_generate(&spec).unwrap().len(), 24);
        assert!(SynthSpec::from_toml("bogus_key = 1").is_err());
    }
}
