//! Run configuration: defaults, then a TOML file, then a window preset,
//! then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pvlstm::data::{preset, TrackFormat};
use pvlstm::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `boxes` or `jta-joints`.
    pub format: String,
    /// Named window preset; sets t_obs, t_pred and stride.
    pub preset: Option<String>,
    pub stride: u64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Undersample training windows to equal final-label counts.
    pub balance: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: "boxes".into(),
            preset: None,
            stride: 1,
            val_frac: 0.1,
            test_frac: 0.1,
            balance: false,
        }
    }
}

impl DataConfig {
    pub fn track_format(&self) -> Result<TrackFormat> {
        Ok(self.format.parse()?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_file(p),
            None => Ok(Self::default()),
        }
    }

    fn apply_preset(&mut self, name: &str) -> Result<()> {
        let Some(p) = preset(name) else {
            bail!("unknown preset {name:?} (known: jta, jta-long, nuscenes)");
        };
        self.model.t_obs = p.t_obs;
        self.model.t_pred = p.t_pred;
        self.data.stride = p.stride;
        self.data.preset = Some(name.to_string());
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.track_format()?;
        if self.data.stride == 0 {
            bail!("stride must be at least 1");
        }
        let (v, t) = (self.data.val_frac, self.data.test_frac);
        if !(0.0..1.0).contains(&v) || !(0.0..1.0).contains(&t) || v + t >= 1.0 {
            bail!("val_frac and test_frac must be in [0, 1) and sum below 1 (got {v}, {t})");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Position and velocity encoders.
    PvLstm,
    /// Position encoder only.
    PLstm,
}

/// Window flags shared by every command that reads tracks.
#[derive(Args, Clone, Debug, Default)]
pub struct WindowFlags {
    /// Window preset: jta, jta-long or nuscenes.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub t_obs: Option<usize>,
    #[arg(long)]
    pub t_pred: Option<usize>,
    #[arg(long)]
    pub stride: Option<u64>,
    /// Track file format: boxes or jta-joints.
    #[arg(long)]
    pub format: Option<String>,
}

impl WindowFlags {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(name) = self.preset.clone().or_else(|| cfg.data.preset.clone()) {
            cfg.apply_preset(&name)?;
        }
        if let Some(v) = self.t_obs {
            cfg.model.t_obs = v;
        }
        if let Some(v) = self.t_pred {
            cfg.model.t_pred = v;
        }
        if let Some(v) = self.stride {
            cfg.data.stride = v;
        }
        if let Some(v) = &self.format {
            cfg.data.format = v.clone();
        }
        Ok(())
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainFlags {
    #[command(flatten)]
    pub window: WindowFlags,
    /// Model variant; p-lstm drops the velocity encoder.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub use_velocity_encoder: Option<bool>,
    #[arg(long)]
    pub n_attr_classes: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub factor: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Train boxes and attributes jointly.
    #[arg(long)]
    pub multi_task: bool,
    #[arg(long)]
    pub attr_final_step_only: Option<bool>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    /// Undersample training windows to equal final-label counts.
    #[arg(long)]
    pub balance: bool,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        self.window.apply(cfg)?;
        let m = &mut cfg.model;
        if let Some(kind) = self.model {
            m.use_velocity_encoder = kind == ModelKind::PvLstm;
        }
        if let Some(v) = self.use_velocity_encoder {
            m.use_velocity_encoder = v;
        }
        if let Some(v) = self.hidden {
            m.hidden = v;
        }
        if let Some(v) = self.n_attr_classes {
            m.n_attr_classes = v;
        }
        let t = &mut cfg.train;
        if let Some(v) = self.lr0 {
            t.lr0 = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch {
            t.batch = v;
        }
        if let Some(v) = self.factor {
            t.factor = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.threshold {
            t.threshold = v;
        }
        if self.multi_task {
            t.multi_task = true;
        }
        if let Some(v) = self.attr_final_step_only {
            t.attr_final_step_only = v;
        }
        if let Some(v) = self.val_frac {
            cfg.data.val_frac = v;
        }
        if let Some(v) = self.test_frac {
            cfg.data.test_frac = v;
        }
        if self.balance {
            cfg.data.balance = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_parse() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.toml");
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.model.hidden, 512);
        cfg.validate().unwrap();
    }

    #[test]
    fn flags_override_file_and_preset() {
        let mut cfg: RunConfig = toml::from_str("[model]\nt_obs = 6\n[data]\npreset = \"nuscenes\"").unwrap();
        let flags = TrainFlags {
            window: WindowFlags {
                t_pred: Some(2),
                ..Default::default()
            },
            model: Some(ModelKind::PLstm),
            epochs: Some(3),
            ..Default::default()
        };
        flags.apply(&mut cfg).unwrap();
        assert_eq!((cfg.model.t_obs, cfg.model.t_pred), (4, 2));
        assert!(!cfg.model.use_velocity_encoder);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr0, 1e-3);
    }

    #[test]
    fn rejects_unknown_keys_and_presets() {
        assert!(toml::from_str::<RunConfig>("[train]\nlearning_rate = 1.0").is_err());
        let mut cfg = RunConfig::default();
        let flags = WindowFlags {
            preset: Some("kitti".into()),
            ..Default::default()
        };
        assert!(flags.apply(&mut cfg).is_err());
    }
}
