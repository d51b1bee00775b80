//! Track files, windowing, class balancing and synthetic tracks.

mod synth;
mod tracks;
mod windows;

pub use synth::{
    synth_generate, Regime, RegimeMix, SynthSpec, ATTR_MOVING, ATTR_NAMES, ATTR_SITTING, ATTR_STANDING, STANDING_SPEED,
};
pub use tracks::{box_from_keypoints, load_tracks, parse_tracks, sort_tracks, write_tracks, TrackFormat, TrackRecord};
pub use windows::{
    balance_classes, observation_windows, preset, split_by_scene, window_samples, ObsWindow, PedKey, Sample,
    SceneSplit, WindowPreset, PRESETS,
};
