//! Losses, Adam, the plateau learning-rate schedule and the training loop.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{to_velocities, Checkpoint, CheckpointMeta, PvLstmModel, PvLstmParams, Velocity6, BOX_DIM};
use crate::params::NamedTensors;

/// Samples per gradient-reduction chunk. Fixed so the floating-point
/// reduction order never depends on the thread count.
const REDUCE_CHUNK: usize = 8;

/// Probability floor applied before taking the log in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub batch: usize,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub seed: u64,
    pub multi_task: bool,
    pub attr_final_step_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            epochs: 100,
            batch: 128,
            factor: 0.1,
            patience: 10,
            threshold: 1e-8,
            seed: 0,
            multi_task: false,
            attr_final_step_only: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("factor must lie in (0, 1), got {}", self.factor)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::Config("threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Which decoder outputs are penalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Velocity MSE only.
    Boxes,
    /// Attribute cross-entropy only (single-task attribute model).
    Attributes,
    /// MSE + cross-entropy, unweighted.
    Joint,
}

impl Objective {
    /// No attribute classes → boxes; attribute classes with `multi_task` →
    /// joint; attribute classes without it → attributes only.
    pub fn resolve(model: &PvLstmModel, cfg: &TrainConfig) -> Result<Self> {
        match (model.config.has_attributes(), cfg.multi_task) {
            (false, false) => Ok(Objective::Boxes),
            (false, true) => Err(Error::Config(
                "multi_task needs a model with n_attr_classes >= 2".into(),
            )),
            (true, true) => Ok(Objective::Joint),
            (true, false) => Ok(Objective::Attributes),
        }
    }

    fn boxes(self) -> bool {
        matches!(self, Objective::Boxes | Objective::Joint)
    }

    fn attributes(self) -> bool {
        matches!(self, Objective::Attributes | Objective::Joint)
    }
}

/// Mean squared error over all `6 · T` components, with its gradient.
pub fn mse_loss(pred: &[Velocity6], target: &[Velocity6]) -> Result<(f64, Vec<[f64; BOX_DIM]>)> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::arg(format!(
            "MSE needs equal non-zero lengths ({} vs {})",
            pred.len(),
            target.len()
        )));
    }
    let n = (BOX_DIM * pred.len()) as f64;
    let mut loss = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let (p, t) = (p.to_array(), t.to_array());
            std::array::from_fn(|j| {
                let d = p[j] - t[j];
                loss += d * d;
                2.0 * d / n
            })
        })
        .collect();
    Ok((loss / n, grads))
}

/// `−log p[label]` with `p` floored at [`PROB_FLOOR`]; the returned gradient
/// is with respect to the softmax logits, `p − onehot(label)`.
pub fn ce_loss(probs: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= probs.len() {
        return Err(Error::arg(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = -probs[label].max(PROB_FLOOR).ln();
    let mut grad = probs.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<P: NamedTensors> AdamState<P> {
    pub fn new(params: &P) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update, tensor by tensor in the fixed naming order.
pub fn adam_step<P: NamedTensors>(params: &mut P, grads: &P, state: &mut AdamState<P>, lr: f64) -> Result<()> {
    let gviews = grads.tensors();
    for g in &gviews {
        if let Some(pos) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {}[{pos}] is {}",
                g.name, g.data[pos]
            )));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, p), g), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(&gviews).zip(ms).zip(vs) {
        for j in 0..p.len() {
            let gj = g.data[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    pub best_val: f64,
    pub epochs_since_improve: usize,
    pub current_lr: f64,
}

impl SchedulerState {
    pub fn new(lr0: f64) -> Self {
        SchedulerState {
            best_val: f64::INFINITY,
            epochs_since_improve: 0,
            current_lr: lr0,
        }
    }
}

/// Improvement means `val < best − threshold`. After more than `patience`
/// non-improving epochs the rate is multiplied by `factor`.
pub fn scheduler_step(state: &SchedulerState, val_loss: f64, cfg: &TrainConfig) -> SchedulerState {
    let mut next = state.clone();
    if val_loss < state.best_val - cfg.threshold {
        next.best_val = val_loss;
        next.epochs_since_improve = 0;
    } else {
        next.epochs_since_improve += 1;
    }
    if next.epochs_since_improve > cfg.patience {
        next.current_lr *= cfg.factor;
        next.epochs_since_improve = 0;
    }
    next
}

/// Loss split into its components; `total = mse + ce`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub ce: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.mse += o.mse;
        self.ce += o.ce;
    }

    fn scaled(self, k: f64) -> LossParts {
        LossParts {
            total: self.total * k,
            mse: self.mse * k,
            ce: self.ce * k,
        }
    }
}

/// Ground-truth velocities of the predicted horizon, the first measured
/// from the last observed box.
pub fn target_velocities(sample: &Sample) -> Result<Vec<Velocity6>> {
    let last = sample
        .obs
        .last()
        .ok_or_else(|| Error::arg("sample without observations"))?;
    let mut seq = Vec::with_capacity(sample.future.len() + 1);
    seq.push(*last);
    seq.extend_from_slice(&sample.future);
    to_velocities(&seq)
}

fn sample_pass(
    model: &PvLstmModel,
    sample: &Sample,
    objective: Objective,
    final_only: bool,
    with_grads: bool,
) -> Result<(LossParts, Option<PvLstmParams>)> {
    let trace = model.forward(&sample.obs)?;
    let t_pred = model.config.t_pred;
    let mut parts = LossParts::default();

    let grad_v = if objective.boxes() {
        let (loss, g) = mse_loss(&trace.velocities, &target_velocities(sample)?)?;
        parts.mse = loss;
        g
    } else {
        vec![[0.0; BOX_DIM]; t_pred]
    };

    let grad_logits = if objective.attributes() {
        let labels = sample.attr_labels.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "sample {}/{} has no attribute labels",
                sample.scene_id, sample.ped_id
            ))
        })?;
        let probs = trace.attr_probs.as_ref().expect("attribute decoder present");
        let steps: Vec<usize> = if final_only {
            vec![t_pred - 1]
        } else {
            (0..t_pred).collect()
        };
        let weight = 1.0 / steps.len() as f64;
        let mut gl = vec![vec![0.0; model.config.n_attr_classes]; t_pred];
        for k in steps {
            let (loss, g) = ce_loss(&probs[k], labels[k])?;
            parts.ce += weight * loss;
            gl[k] = g.into_iter().map(|v| v * weight).collect();
        }
        Some(gl)
    } else {
        None
    };

    parts.total = parts.mse + parts.ce;
    if !with_grads {
        return Ok((parts, None));
    }
    let grads = model.backward(&trace, &grad_v, grad_logits.as_deref())?;
    Ok((parts, Some(grads)))
}

/// Per-sample loss and exact parameter gradient.
pub fn sample_gradient(model: &PvLstmModel, sample: &Sample, cfg: &TrainConfig) -> Result<(LossParts, PvLstmParams)> {
    let objective = Objective::resolve(model, cfg)?;
    let (parts, grads) = sample_pass(model, sample, objective, cfg.attr_final_step_only, true)?;
    Ok((parts, grads.expect("requested")))
}

/// Mean loss and gradient over `samples`, reduced in a fixed order.
pub fn batch_gradient(
    model: &PvLstmModel,
    samples: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(LossParts, PvLstmParams)> {
    if samples.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let objective = Objective::resolve(model, cfg)?;
    let partials = samples
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut grads = model.params.zeros_like();
            let mut parts = LossParts::default();
            for s in chunk {
                let (p, g) = sample_pass(model, s, objective, cfg.attr_final_step_only, true)?;
                parts.add(&p);
                grads.add_assign(&g.expect("requested"));
            }
            Ok((parts, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = LossParts::default();
    let mut grads = model.params.zeros_like();
    for (p, g) in &partials {
        parts.add(p);
        grads.add_assign(g);
    }
    let k = 1.0 / samples.len() as f64;
    grads.scale(k);
    Ok((parts.scaled(k), grads))
}

/// Mean loss over `samples` without gradients.
pub fn evaluate_loss(model: &PvLstmModel, samples: &[Sample], cfg: &TrainConfig) -> Result<LossParts> {
    if samples.is_empty() {
        return Err(Error::arg("empty evaluation set"));
    }
    let objective = Objective::resolve(model, cfg)?;
    let partials = samples
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut parts = LossParts::default();
            for s in chunk {
                parts.add(&sample_pass(model, s, objective, cfg.attr_final_step_only, false)?.0);
            }
            Ok(parts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = LossParts::default();
    for p in &partials {
        parts.add(p);
    }
    Ok(parts.scaled(1.0 / samples.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub train_mse: f64,
    pub train_ce: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,lr,train_mse,train_ce";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.train_mse, r.train_ce
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: PvLstmModel,
    /// Parameters after the last epoch.
    pub last: PvLstmModel,
    pub history: History,
    pub best_epoch: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("ckpt-epoch{epoch:04}-best.json")
}

/// Trains with seeded shuffling, Adam and the plateau schedule, keeping the
/// best-validation parameters. When `checkpoint_dir` is given the current
/// best checkpoint is kept on disk there.
pub fn fit(
    model: PvLstmModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::arg(format!(
            "training needs non-empty sets (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    Objective::resolve(&model, cfg)?;
    let (t_obs, t_pred) = (model.config.t_obs, model.config.t_pred);
    if let Some(s) = train
        .iter()
        .chain(val)
        .find(|s| s.obs.len() != t_obs || s.future.len() != t_pred)
    {
        return Err(Error::Config(format!(
            "sample {}/{} has {}+{} frames, model expects {t_obs}+{t_pred}",
            s.scene_id,
            s.ped_id,
            s.obs.len(),
            s.future.len()
        )));
    }
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let mut model = model;
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = None;
    let mut checkpoint: Option<PathBuf> = None;
    let mut history = History::default();
    let mut adam = AdamState::new(&model.params);
    let mut sched = SchedulerState::new(cfg.lr0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = sched.current_lr;
        let mut sum = LossParts::default();
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let (parts, grads) = batch_gradient(&model, &batch, cfg)?;
            if !parts.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    detail: format!("loss is {}", parts.total),
                });
            }
            adam_step(&mut model.params, &grads, &mut adam, lr).map_err(|e| Error::Training {
                epoch,
                batch: b,
                detail: e.to_string(),
            })?;
            sum.add(&parts.scaled(batch.len() as f64));
        }
        let train_parts = sum.scaled(1.0 / train.len() as f64);
        let val_parts = evaluate_loss(&model, val, cfg)?;
        if !val_parts.total.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                detail: format!("validation loss is {}", val_parts.total),
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss: train_parts.total,
            val_loss: val_parts.total,
            lr,
            train_mse: train_parts.mse,
            train_ce: train_parts.ce,
        });
        log::info!(
            "epoch {epoch:>4}  train {:.6e}  val {:.6e}  lr {lr:.1e}",
            train_parts.total,
            val_parts.total
        );

        if val_parts.total < best_val {
            best_val = val_parts.total;
            best = model.clone();
            best_epoch = Some(epoch);
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(checkpoint_file_name(epoch));
                let meta = CheckpointMeta {
                    tag: "best".into(),
                    epoch,
                    train_loss: Some(train_parts.total),
                    val_loss: Some(val_parts.total),
                    lr: Some(lr),
                };
                Checkpoint::from_model(&model, meta).save(&path)?;
                if let Some(old) = checkpoint.replace(path) {
                    fs::remove_file(old)?;
                }
            }
        }
        sched = scheduler_step(&sched, val_parts.total, cfg);
    }

    Ok(FitResult {
        model: best,
        last: model,
        history,
        best_epoch,
        checkpoint,
    })
}
