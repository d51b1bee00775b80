//! Position-velocity encoder-decoder.
//!
//! Two encoders run from zero states: one over the observed boxes, one over
//! their successive differences. Their final `(h, c)` are concatenated into
//! the fused state that seeds both decoders. The velocity decoder starts from
//! the last observed velocity and feeds each prediction back as the next
//! input; a linear head maps every decoder hidden state to a velocity. The
//! optional attribute decoder shares the fused state, reads the last observed
//! velocity at every step and ends in a softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{integrate, to_velocities, BBox3d, Velocity6};
use crate::error::{Error, Result};
use crate::linalg::{concat, Vector};
use crate::nn::{lstm_backward, softmax, Linear, LstmParams, LstmState, StepCache};
use crate::params::{prefixed, prefixed_mut, NamedTensors, TensorView};

/// Width of a box / velocity vector.
pub const BOX_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden size of each encoder.
    pub hidden: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    /// `false` gives the position-only ablation.
    pub use_velocity_encoder: bool,
    /// `0` disables the attribute decoder.
    pub n_attr_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 512,
            t_obs: 4,
            t_pred: 4,
            use_velocity_encoder: true,
            n_attr_classes: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_obs < 2 {
            return Err(Error::Config(format!("t_obs must be at least 2, got {}", self.t_obs)));
        }
        if self.t_pred < 1 {
            return Err(Error::Config("t_pred must be at least 1".into()));
        }
        if self.hidden < 1 {
            return Err(Error::Config("hidden must be at least 1".into()));
        }
        if self.n_attr_classes == 1 {
            return Err(Error::Config("an attribute decoder needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// Width of the concatenated encoder state, which is also the decoder
    /// hidden size.
    pub fn fused_dim(&self) -> usize {
        if self.use_velocity_encoder {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn has_attributes(&self) -> bool {
        self.n_attr_classes >= 2
    }
}

/// All trainable tensors. Also used as the gradient and optimizer-moment
/// container, since those mirror the parameters exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct PvLstmParams {
    pub enc_p: LstmParams,
    pub enc_v: Option<LstmParams>,
    pub dec_v: LstmParams,
    pub fc_v: Linear,
    pub dec_a: Option<LstmParams>,
    pub fc_a: Option<Linear>,
}

impl PvLstmParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let fused = cfg.fused_dim();
        PvLstmParams {
            enc_p: LstmParams::zeros(BOX_DIM, cfg.hidden),
            enc_v: cfg.use_velocity_encoder.then(|| LstmParams::zeros(BOX_DIM, cfg.hidden)),
            dec_v: LstmParams::zeros(BOX_DIM, fused),
            fc_v: Linear::zeros(fused, BOX_DIM),
            dec_a: cfg.has_attributes().then(|| LstmParams::zeros(BOX_DIM, fused)),
            fc_a: cfg.has_attributes().then(|| Linear::zeros(fused, cfg.n_attr_classes)),
        }
    }

    /// Each component draws from its own ChaCha8 stream of `cfg.seed`, so a
    /// component's initial values do not depend on which others exist.
    pub fn random(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(stream);
            r
        };
        let fused = cfg.fused_dim();
        Ok(PvLstmParams {
            enc_p: LstmParams::random(&mut rng(0), BOX_DIM, cfg.hidden)?,
            enc_v: if cfg.use_velocity_encoder {
                Some(LstmParams::random(&mut rng(1), BOX_DIM, cfg.hidden)?)
            } else {
                None
            },
            dec_v: LstmParams::random(&mut rng(2), BOX_DIM, fused)?,
            fc_v: Linear::random(&mut rng(3), fused, BOX_DIM)?,
            dec_a: if cfg.has_attributes() {
                Some(LstmParams::random(&mut rng(4), BOX_DIM, fused)?)
            } else {
                None
            },
            fc_a: if cfg.has_attributes() {
                Some(Linear::random(&mut rng(5), fused, cfg.n_attr_classes)?)
            } else {
                None
            },
        })
    }
}

impl NamedTensors for PvLstmParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out: Vec<TensorView<'_>> = prefixed("enc_p", self.enc_p.tensors()).collect();
        if let Some(e) = &self.enc_v {
            out.extend(prefixed("enc_v", e.tensors()));
        }
        out.extend(prefixed("dec_v", self.dec_v.tensors()));
        out.extend(prefixed("fc_v", self.fc_v.tensors()));
        if let Some(d) = &self.dec_a {
            out.extend(prefixed("dec_a", d.tensors()));
        }
        if let Some(f) = &self.fc_a {
            out.extend(prefixed("fc_a", f.tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = prefixed_mut("enc_p", self.enc_p.tensors_mut()).collect();
        if let Some(e) = &mut self.enc_v {
            out.extend(prefixed_mut("enc_v", e.tensors_mut()));
        }
        out.extend(prefixed_mut("dec_v", self.dec_v.tensors_mut()));
        out.extend(prefixed_mut("fc_v", self.fc_v.tensors_mut()));
        if let Some(d) = &mut self.dec_a {
            out.extend(prefixed_mut("dec_a", d.tensors_mut()));
        }
        if let Some(f) = &mut self.fc_a {
            out.extend(prefixed_mut("fc_a", f.tensors_mut()));
        }
        out
    }

    fn zeros_like(&self) -> Self {
        PvLstmParams {
            enc_p: self.enc_p.zeros_like(),
            enc_v: self.enc_v.as_ref().map(|e| e.zeros_like()),
            dec_v: self.dec_v.zeros_like(),
            fc_v: self.fc_v.zeros_like(),
            dec_a: self.dec_a.as_ref().map(|d| d.zeros_like()),
            fc_a: self.fc_a.as_ref().map(|f| f.zeros_like()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PvLstmModel {
    pub config: ModelConfig,
    pub params: PvLstmParams,
}

/// Model output for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub boxes: Vec<BBox3d>,
    /// One distribution per predicted step when the attribute decoder exists.
    pub attrs: Option<Vec<Vector>>,
}

/// Forward intermediates of one window, consumed by [`PvLstmModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    enc_p: Vec<StepCache>,
    enc_v: Vec<StepCache>,
    dec_v: Vec<StepCache>,
    dec_a: Vec<StepCache>,
    pub velocities: Vec<Velocity6>,
    pub attr_probs: Option<Vec<Vector>>,
}

impl PvLstmModel {
    /// Randomly initialized from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = PvLstmParams::random(&config)?;
        Ok(PvLstmModel { config, params })
    }

    /// Every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = PvLstmParams::zeros(&config);
        Ok(PvLstmModel { config, params })
    }

    fn check_window(&self, window: &[BBox3d]) -> Result<()> {
        if window.len() != self.config.t_obs {
            return Err(Error::arg(format!(
                "observation window has {} boxes, model expects {}",
                window.len(),
                self.config.t_obs
            )));
        }
        Ok(())
    }

    fn run_encoders(&self, window: &[BBox3d]) -> Result<(LstmState, Vec<StepCache>, Vec<StepCache>)> {
        self.check_window(window)?;
        let hidden = self.config.hidden;
        let positions: Vec<Vector> = window.iter().map(|b| b.to_array().to_vec()).collect();
        let (sp, caches_p) = self.params.enc_p.run(&LstmState::zeros(hidden), &positions)?;
        match &self.params.enc_v {
            Some(enc_v) => {
                let vels: Vec<Vector> = to_velocities(window)?.iter().map(|v| v.to_array().to_vec()).collect();
                let (sv, caches_v) = enc_v.run(&LstmState::zeros(hidden), &vels)?;
                let fused = LstmState {
                    h: concat(&sp.h, &sv.h),
                    c: concat(&sp.c, &sv.c),
                };
                Ok((fused, caches_p, caches_v))
            }
            None => Ok((sp, caches_p, Vec::new())),
        }
    }

    /// Fused encoder state for an observation window.
    pub fn encode(&self, window: &[BBox3d]) -> Result<LstmState> {
        Ok(self.run_encoders(window)?.0)
    }

    fn check_fused(&self, fused: &LstmState) -> Result<()> {
        let want = self.config.fused_dim();
        if fused.h.len() != want || fused.c.len() != want {
            return Err(Error::shape(
                "decode",
                format!("fused dim {want}"),
                format!("state h {} / c {}", fused.h.len(), fused.c.len()),
            ));
        }
        Ok(())
    }

    fn run_velocity_decoder(&self, fused: &LstmState, v_last: &Velocity6) -> Result<(Vec<Velocity6>, Vec<StepCache>)> {
        self.check_fused(fused)?;
        let mut state = fused.clone();
        let mut input = v_last.to_array().to_vec();
        let mut vels = Vec::with_capacity(self.config.t_pred);
        let mut caches = Vec::with_capacity(self.config.t_pred);
        for _ in 0..self.config.t_pred {
            let (next, cache) = self.params.dec_v.step(&state, &input)?;
            input = self.params.fc_v.forward(&next.h)?;
            vels.push(Velocity6::from_array(
                input.as_slice().try_into().expect("head emits six values"),
            ));
            caches.push(cache);
            state = next;
        }
        Ok((vels, caches))
    }

    fn run_attribute_decoder(&self, fused: &LstmState, v_last: &Velocity6) -> Result<(Vec<Vector>, Vec<StepCache>)> {
        let (dec, fc) = match (&self.params.dec_a, &self.params.fc_a) {
            (Some(d), Some(f)) => (d, f),
            _ => {
                return Err(Error::Config(
                    "attribute decoder is disabled (n_attr_classes < 2)".into(),
                ))
            }
        };
        self.check_fused(fused)?;
        let input = v_last.to_array();
        let mut state = fused.clone();
        let mut probs = Vec::with_capacity(self.config.t_pred);
        let mut caches = Vec::with_capacity(self.config.t_pred);
        for _ in 0..self.config.t_pred {
            let (next, cache) = dec.step(&state, &input)?;
            probs.push(softmax(&fc.forward(&next.h)?)?);
            caches.push(cache);
            state = next;
        }
        Ok((probs, caches))
    }

    /// Closed-loop velocity rollout of `t_pred` steps.
    pub fn decode_velocities(&self, fused: &LstmState, v_last: &Velocity6) -> Result<Vec<Velocity6>> {
        Ok(self.run_velocity_decoder(fused, v_last)?.0)
    }

    /// Per-step class distributions.
    pub fn decode_attributes(&self, fused: &LstmState, v_last: &Velocity6) -> Result<Vec<Vector>> {
        Ok(self.run_attribute_decoder(fused, v_last)?.0)
    }

    pub fn predict(&self, window: &[BBox3d]) -> Result<Prediction> {
        let trace = self.forward(window)?;
        let anchor = window.last().expect("window length checked");
        Ok(Prediction {
            boxes: integrate(anchor, &trace.velocities),
            attrs: trace.attr_probs,
        })
    }

    /// Full forward pass keeping everything needed for backpropagation.
    pub fn forward(&self, window: &[BBox3d]) -> Result<ForwardTrace> {
        let (fused, enc_p, enc_v) = self.run_encoders(window)?;
        let n = window.len();
        let v_last = Velocity6::between(&window[n - 2], &window[n - 1]);
        let (velocities, dec_v) = self.run_velocity_decoder(&fused, &v_last)?;
        let (attr_probs, dec_a) = if self.config.has_attributes() {
            let (p, c) = self.run_attribute_decoder(&fused, &v_last)?;
            (Some(p), c)
        } else {
            (None, Vec::new())
        };
        Ok(ForwardTrace {
            enc_p,
            enc_v,
            dec_v,
            dec_a,
            velocities,
            attr_probs,
        })
    }

    /// Exact gradients given `dL/dv̂_k` for each predicted velocity and,
    /// optionally, `dL/dlogits_k` for each attribute step.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_velocities: &[[f64; BOX_DIM]],
        grad_logits: Option<&[Vector]>,
    ) -> Result<PvLstmParams> {
        let t_pred = self.config.t_pred;
        if grad_velocities.len() != t_pred {
            return Err(Error::shape(
                "backward",
                format!("t_pred {t_pred}"),
                format!("{} velocity gradients", grad_velocities.len()),
            ));
        }
        let fused = self.config.fused_dim();
        let p = &self.params;
        let mut grads = p.zeros_like();

        // Velocity decoder. Step k's prediction is step k+1's input, so the
        // input gradient of k+1 joins the loss gradient of k.
        let mut dh = vec![0.0; fused];
        let mut dc = vec![0.0; fused];
        let mut d_next_input = [0.0; BOX_DIM];
        for k in (0..t_pred).rev() {
            let cache = &trace.dec_v[k];
            let dv: Vec<f64> = (0..BOX_DIM).map(|j| grad_velocities[k][j] + d_next_input[j]).collect();
            let dh_head = p.fc_v.backward(&cache.h, &dv, &mut grads.fc_v);
            for (a, b) in dh.iter_mut().zip(&dh_head) {
                *a += b;
            }
            let (dx, dh_prev, dc_prev) = p.dec_v.step_backward(cache, &dh, &dc, &mut grads.dec_v);
            d_next_input.copy_from_slice(&dx);
            dh = dh_prev;
            dc = dc_prev;
        }

        if let Some(gl) = grad_logits {
            let (dec, fc) = match (&p.dec_a, &p.fc_a) {
                (Some(d), Some(f)) => (d, f),
                _ => {
                    return Err(Error::Config(
                        "attribute gradients given but decoder is disabled".into(),
                    ))
                }
            };
            if gl.len() != t_pred || gl.iter().any(|g| g.len() != self.config.n_attr_classes) {
                return Err(Error::shape(
                    "backward",
                    format!("{t_pred} steps of {} classes", self.config.n_attr_classes),
                    format!("{} logit gradients", gl.len()),
                ));
            }
            let g_dec = grads.dec_a.as_mut().expect("mirrors params");
            let g_fc = grads.fc_a.as_mut().expect("mirrors params");
            let mut dha = vec![0.0; fused];
            let mut dca = vec![0.0; fused];
            for k in (0..t_pred).rev() {
                let cache = &trace.dec_a[k];
                let dh_head = fc.backward(&cache.h, &gl[k], g_fc);
                for (a, b) in dha.iter_mut().zip(&dh_head) {
                    *a += b;
                }
                let (_, dh_prev, dc_prev) = dec.step_backward(cache, &dha, &dca, g_dec);
                dha = dh_prev;
                dca = dc_prev;
            }
            for (a, b) in dh.iter_mut().zip(&dha) {
                *a += b;
            }
            for (a, b) in dc.iter_mut().zip(&dca) {
                *a += b;
            }
        }

        // Split the fused-state gradient back onto the encoders.
        let hidden = self.config.hidden;
        let grad_p = LstmState {
            h: dh[..hidden].to_vec(),
            c: dc[..hidden].to_vec(),
        };
        grads.enc_p = lstm_backward(&p.enc_p, &trace.enc_p, &grad_p, None)?.grads;
        if let Some(enc_v) = &p.enc_v {
            let grad_v = LstmState {
                h: dh[hidden..].to_vec(),
                c: dc[hidden..].to_vec(),
            };
            grads.enc_v = Some(lstm_backward(enc_v, &trace.enc_v, &grad_v, None)?.grads);
        }
        Ok(grads)
    }
}
