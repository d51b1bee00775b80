use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use pvlstm::data::{
    balance_classes, load_tracks, observation_windows, split_by_scene, synth_generate, window_samples, write_tracks,
    Sample, SynthSpec,
};
use pvlstm::eval::{evaluate_model, evaluate_zero_vel, predict_samples};
use pvlstm::linalg::Vector;
use pvlstm::metrics::EvalReport;
use pvlstm::model::{BBox3d, CheckpointMeta};
use pvlstm::train::{checkpoint_file_name, fit};
use pvlstm::{Checkpoint, ModelConfig, PvLstmModel};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TrainFlags, WindowFlags};
use crate::manifest::{FileDigest, RunManifest};
use crate::plot::{horizon_svg, overlay_svg, OverlayPanel};

pub struct Context {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn inputs<'a>(&'a self, data: &'a [&'a Path]) -> Vec<&'a Path> {
        let mut v: Vec<&Path> = data.to_vec();
        if let Some(c) = &self.config {
            v.push(c);
        }
        v
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------------ gen

pub fn gen(ctx: &Context, spec_path: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec = SynthSpec::from_toml(&text)?;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let out = ctx.out_dir()?;
    let mut manifest = RunManifest::begin("gen", &spec, &[spec_path], Some(spec.seed))?;
    manifest.write(out)?;

    let tracks = synth_generate(&spec)?;
    let path = out.join("tracks.jsonl");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_tracks(&mut w, &tracks)?;
    w.flush()?;
    manifest.finish(out, std::slice::from_ref(&path))?;
    let peds: BTreeSet<&str> = tracks.iter().map(|t| t.ped_id.as_str()).collect();
    ctx.say(format!(
        "wrote {} records for {} pedestrians to {}",
        tracks.len(),
        peds.len(),
        path.display()
    ));
    Ok(())
}

// ------------------------------------------------------------------ train

pub fn train(ctx: &Context, data: &Path, flags: &TrainFlags) -> Result<()> {
    let mut cfg = RunConfig::load(ctx.config.as_deref())?;
    flags.apply(&mut cfg)?;
    if let Some(seed) = ctx.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    if cfg.data.balance {
        ensure!(cfg.model.n_attr_classes >= 2, "balance needs n_attr_classes >= 2");
    }
    let out = ctx.out_dir()?;
    let mut manifest = RunManifest::begin("train", &cfg, &ctx.inputs(&[data]), Some(cfg.train.seed))?;
    manifest.write(out)?;

    let tracks = load_tracks(data, cfg.data.track_format()?)?;
    let split = split_by_scene(&tracks, cfg.data.val_frac, cfg.data.test_frac, cfg.train.seed)?;
    let (t_obs, t_pred, stride) = (cfg.model.t_obs, cfg.model.t_pred, cfg.data.stride);
    let mut train_set = window_samples(&split.train, t_obs, t_pred, stride)?;
    let val_set = window_samples(&split.val, t_obs, t_pred, stride)?;
    if cfg.data.balance {
        train_set = balance_classes(train_set, cfg.model.n_attr_classes, cfg.train.seed)?;
    }
    ensure!(
        !train_set.is_empty() && !val_set.is_empty(),
        "need training and validation windows, got {} and {} (t_obs {t_obs}, t_pred {t_pred}, stride {stride}); \
         add scenes or adjust val_frac",
        train_set.len(),
        val_set.len()
    );
    log::info!("{} training and {} validation windows", train_set.len(), val_set.len());

    let mut outputs = Vec::new();
    if !split.test.is_empty() {
        let test_path = out.join("test_tracks.jsonl");
        let mut w = BufWriter::new(File::create(&test_path)?);
        write_tracks(&mut w, &split.test)?;
        w.flush()?;
        outputs.push(test_path);
    }

    let model = PvLstmModel::new(cfg.model.clone())?;
    let result = fit(model, &train_set, &val_set, &cfg.train, Some(out))?;
    let checkpoint = match result.checkpoint.clone() {
        Some(p) => p,
        None => {
            let p = out.join(checkpoint_file_name(0));
            let meta = CheckpointMeta {
                tag: "initial".into(),
                ..Default::default()
            };
            Checkpoint::from_model(&result.model, meta).save(&p)?;
            p
        }
    };
    let history = out.join("history.csv");
    write_file(&history, result.history.to_csv())?;
    outputs.push(checkpoint.clone());
    outputs.push(history);
    manifest.finish(out, &outputs)?;

    match result.history.records.last() {
        Some(last) => ctx.say(format!(
            "final val loss {:.6e} (best {:.6e} at epoch {}), checkpoint {}",
            last.val_loss,
            result
                .history
                .records
                .iter()
                .map(|r| r.val_loss)
                .fold(f64::INFINITY, f64::min),
            result.best_epoch.unwrap_or(0),
            checkpoint.display()
        )),
        None => ctx.say(format!("no epochs run, initial checkpoint {}", checkpoint.display())),
    }
    Ok(())
}

// ------------------------------------------------------------------ eval

/// Resolves the run configuration against a checkpoint. The config file
/// and window flags may restate the model settings but must agree.
fn resolve_against(ctx: &Context, window: &WindowFlags, ckpt: &ModelConfig) -> Result<RunConfig> {
    let mut cfg = match &ctx.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig {
            model: ckpt.clone(),
            ..Default::default()
        },
    };
    window.apply(&mut cfg)?;
    cfg.model.seed = ckpt.seed;
    if &cfg.model != ckpt {
        bail!(
            "checkpoint config does not match the requested config\ncheckpoint: {}\nrequested:  {}",
            serde_json::to_string(ckpt)?,
            serde_json::to_string(&cfg.model)?
        );
    }
    cfg.data.track_format()?;
    ensure!(cfg.data.stride >= 1, "stride must be at least 1");
    Ok(cfg)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreviewSample {
    pub scene_id: String,
    pub ped_id: String,
    pub start_frame: u64,
    pub obs: Vec<BBox3d>,
    pub gt: Vec<BBox3d>,
    pub pred: Vec<BBox3d>,
}

/// Contents of `eval.json`, the input of `report`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub label: String,
    pub checkpoint: FileDigest,
    pub data: FileDigest,
    pub config: ModelConfig,
    pub stride: u64,
    pub model: ReportRow,
    pub zero_vel: ReportRow,
    pub preview: Vec<PreviewSample>,
}

const METRICS_HEADER: &str = "model,ade,fde,aiou,fiou,attr_accuracy,n_samples,invalid_pred_boxes";

fn metrics_line(name: &str, r: &EvalReport) -> String {
    format!(
        "{name},{},{},{},{},{},{},{}",
        r.ade,
        r.fde,
        r.aiou,
        r.fiou,
        r.attr_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        r.n_samples,
        r.invalid_pred_boxes
    )
}

fn table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>8}  {:>7}  {:>7}  {:>8}  {:>7}\n",
        "model", "ADE", "FDE", "AIOU", "FIOU", "attr acc", "n"
    );
    for (name, r) in rows {
        let acc = r
            .attr_accuracy
            .map(|a| format!("{:.1}%", 100.0 * a))
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{name:<width$}  {:>8.4}  {:>8.4}  {:>7.4}  {:>7.4}  {acc:>8}  {:>7}\n",
            r.ade, r.fde, r.aiou, r.fiou, r.n_samples
        ));
    }
    s
}

fn spread(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|i| i * n / k).collect()
}

pub fn eval(
    ctx: &Context,
    data: &Path,
    checkpoint: &Path,
    label: Option<String>,
    preview: usize,
    window: &WindowFlags,
) -> Result<()> {
    let (model, _) = Checkpoint::load_model(checkpoint, None)?;
    let cfg = resolve_against(ctx, window, &model.config)?;
    let out = ctx.out_dir()?;
    let mut manifest = RunManifest::begin("eval", &cfg, &ctx.inputs(&[data, checkpoint]), ctx.seed)?;
    manifest.write(out)?;

    let tracks = load_tracks(data, cfg.data.track_format()?)?;
    let (t_obs, t_pred) = (model.config.t_obs, model.config.t_pred);
    let samples: Vec<Sample> = window_samples(&tracks, t_obs, t_pred, cfg.data.stride)?;
    ensure!(
        !samples.is_empty(),
        "no {t_obs}+{t_pred} frame windows in {} at stride {}",
        data.display(),
        cfg.data.stride
    );
    let final_only = cfg.train.attr_final_step_only;
    let report = evaluate_model(&model, &samples, final_only)?;
    let zero = evaluate_zero_vel(&samples, t_pred)?;
    if report.invalid_pred_boxes > 0 {
        log::warn!("{} predicted boxes have a negative extent", report.invalid_pred_boxes);
    }

    let picked: Vec<Sample> = spread(samples.len(), preview)
        .into_iter()
        .map(|i| samples[i].clone())
        .collect();
    let preds = predict_samples(&model, &picked)?;
    let preview = picked
        .into_iter()
        .zip(preds.boxes)
        .map(|(s, pred)| PreviewSample {
            scene_id: s.scene_id,
            ped_id: s.ped_id,
            start_frame: s.start_frame,
            obs: s.obs,
            gt: s.future,
            pred,
        })
        .collect();

    let label = label.unwrap_or_else(|| {
        checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let file = EvalFile {
        label: label.clone(),
        checkpoint: FileDigest::of(checkpoint)?,
        data: FileDigest::of(data)?,
        config: model.config.clone(),
        stride: cfg.data.stride,
        model: ReportRow {
            name: label.clone(),
            report: report.clone(),
        },
        zero_vel: ReportRow {
            name: "Zero-Vel".into(),
            report: zero.clone(),
        },
        preview,
    };
    let eval_path = out.join("eval.json");
    write_file(&eval_path, serde_json::to_string_pretty(&file)? + "\n")?;

    let metrics_path = out.join("metrics.csv");
    write_file(
        &metrics_path,
        format!(
            "{METRICS_HEADER}\n{}\n{}\n",
            metrics_line(&label, &report),
            metrics_line("Zero-Vel", &zero)
        ),
    )?;
    let mut horizon = String::from("model,step,displacement,iou\n");
    for (name, r) in [(label.as_str(), &report), ("Zero-Vel", &zero)] {
        for h in &r.horizon {
            horizon.push_str(&format!("{name},{},{},{}\n", h.step, h.displacement, h.iou));
        }
    }
    let horizon_path = out.join("horizon.csv");
    write_file(&horizon_path, horizon)?;
    manifest.finish(out, &[eval_path, metrics_path, horizon_path])?;
    ctx.say(table(&[(&label, &report), ("Zero-Vel", &zero)]));
    Ok(())
}

// ------------------------------------------------------------------ predict

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub scene_id: String,
    pub ped_id: String,
    /// Last observed frame.
    pub frame: u64,
    pub start_frame: u64,
    pub pred_frames: Vec<u64>,
    pub boxes: Vec<BBox3d>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attrs: Option<Vec<Vector>>,
}

pub fn predict(ctx: &Context, tracks_path: &Path, checkpoint: &Path, window: &WindowFlags) -> Result<()> {
    let (model, _) = Checkpoint::load_model(checkpoint, None)?;
    let cfg = resolve_against(ctx, window, &model.config)?;
    let out = ctx.out_dir()?;
    let mut manifest = RunManifest::begin("predict", &cfg, &ctx.inputs(&[tracks_path, checkpoint]), ctx.seed)?;
    manifest.write(out)?;

    let tracks = load_tracks(tracks_path, cfg.data.track_format()?)?;
    let stride = cfg.data.stride;
    let (windows, skipped) = observation_windows(&tracks, model.config.t_obs, stride)?;
    for (scene, ped) in &skipped {
        log::warn!(
            "track {scene}/{ped} has no {} consecutive frames at stride {stride}; skipped",
            model.config.t_obs
        );
    }
    let mut rows = Vec::with_capacity(windows.len());
    for w in windows {
        let p = model.predict(&w.obs)?;
        rows.push(PredictionRow {
            pred_frames: (1..=model.config.t_pred as u64)
                .map(|k| w.last_frame + k * stride)
                .collect(),
            scene_id: w.scene_id,
            ped_id: w.ped_id,
            frame: w.last_frame,
            start_frame: w.start_frame,
            boxes: p.boxes,
            attrs: p.attrs,
        });
    }
    let path = out.join("predictions.jsonl");
    write_json_lines(&path, &rows)?;
    manifest.finish(out, std::slice::from_ref(&path))?;
    ctx.say(format!(
        "wrote {} predictions to {}; skipped {} short tracks",
        rows.len(),
        path.display(),
        skipped.len()
    ));
    Ok(())
}

// ------------------------------------------------------------------ report

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn xz(boxes: &[BBox3d]) -> Vec<[f64; 2]> {
    boxes.iter().map(|b| [b.x, b.z]).collect()
}

pub fn report(ctx: &Context, inputs: &[PathBuf]) -> Result<()> {
    ensure!(!inputs.is_empty(), "report needs at least one eval.json");
    // An eval output directory stands for the eval.json inside it.
    let inputs: Vec<PathBuf> = inputs
        .iter()
        .map(|p| if p.is_dir() { p.join("eval.json") } else { p.clone() })
        .collect();
    let mut files = Vec::with_capacity(inputs.len());
    for p in &inputs {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let f: EvalFile =
            serde_json::from_str(&text).with_context(|| format!("{} is not an eval output", p.display()))?;
        files.push(f);
    }
    let out = ctx.out_dir()?;
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut manifest = RunManifest::begin("report", &serde_json::json!({ "inputs": inputs }), &input_refs, None)?;
    manifest.write(out)?;

    // Model rows get unique names; Zero-Vel appears once per distinct
    // evaluation set.
    let mut rows: Vec<(String, String, EvalReport)> = Vec::new();
    let mut used = BTreeSet::new();
    for f in &files {
        let mut name = f.label.clone();
        let mut k = 2;
        while !used.insert(name.clone()) {
            name = format!("{}#{k}", f.label);
            k += 1;
        }
        rows.push((name, f.data.sha256.clone(), f.model.report.clone()));
    }
    let mut seen_sets = Vec::new();
    for f in &files {
        let key = (f.data.sha256.clone(), f.config.t_obs, f.config.t_pred, f.stride);
        if !seen_sets.contains(&key) {
            seen_sets.push(key);
        }
    }
    for f in &files {
        let name = if seen_sets.len() == 1 {
            "Zero-Vel".to_string()
        } else {
            format!("Zero-Vel ({})", f.data.path.display())
        };
        if rows.iter().any(|(n, _, _)| *n == name) {
            continue;
        }
        rows.push((name, f.data.sha256.clone(), f.zero_vel.report.clone()));
    }

    let mut csv = format!("{METRICS_HEADER},data_sha256\n");
    for (name, digest, r) in &rows {
        csv.push_str(&format!("{},{digest}\n", metrics_line(name, r)));
    }
    let summary = out.join("summary.csv");
    write_file(&summary, csv)?;
    let mut outputs = vec![summary];

    let displacement: Vec<(String, Vec<f64>)> = rows
        .iter()
        .map(|(n, _, r)| (n.clone(), r.horizon.iter().map(|h| h.displacement).collect()))
        .collect();
    let iou: Vec<(String, Vec<f64>)> = rows
        .iter()
        .map(|(n, _, r)| (n.clone(), r.horizon.iter().map(|h| h.iou).collect()))
        .collect();
    for (file, title, unit, series) in [
        (
            "horizon-displacement.svg",
            "Center displacement by prediction step",
            "displacement (m)",
            &displacement,
        ),
        ("horizon-iou.svg", "3D IoU by prediction step", "IoU", &iou),
    ] {
        let p = out.join(file);
        write_file(&p, horizon_svg(title, unit, series))?;
        outputs.push(p);
    }
    for (f, (name, _, _)) in files.iter().zip(&rows) {
        if f.preview.is_empty() {
            continue;
        }
        let panels: Vec<OverlayPanel> = f
            .preview
            .iter()
            .map(|s| OverlayPanel {
                title: format!("{}/{} @{}", s.scene_id, s.ped_id, s.start_frame),
                obs: xz(&s.obs),
                gt: xz(&s.gt),
                pred: xz(&s.pred),
            })
            .collect();
        let p = out.join(format!("overlay-{}.svg", slug(name)));
        write_file(&p, overlay_svg(&format!("{name}: ground truth vs prediction"), &panels))?;
        outputs.push(p);
    }
    manifest.finish(out, &outputs)?;
    let view: Vec<(&str, &EvalReport)> = rows.iter().map(|(n, _, r)| (n.as_str(), r)).collect();
    ctx.say(table(&view));
    Ok(())
}
