//! Acceptance gate. Runs every criterion in sequence, prints one
//! `A<n> PASS|FAIL` line each and exits non-zero if any failed. Extra
//! arguments select criteria by id (`a2 a9`).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pvlstm::data::{
    balance_classes, split_by_scene, synth_generate, window_samples, RegimeMix, Sample, SynthSpec, TrackRecord,
};
use pvlstm::eval::{evaluate_model, evaluate_zero_vel};
use pvlstm::metrics::{iou3d, mc_iou_oracle};
use pvlstm::model::{integrate, to_velocities, zero_vel_predict, BBox3d, ModelConfig, PvLstmModel};
use pvlstm::nn::{grad_check_with, Stencil};
use pvlstm::params::NamedTensors;
use pvlstm::train::{batch_gradient, evaluate_loss, fit, scheduler_step, FitResult, SchedulerState, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pass flag and a one-line account of what was measured.
type Verdict = (bool, String);

struct Splits {
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn windows(tracks: &[TrackRecord], t_obs: usize, t_pred: usize) -> Vec<Sample> {
    window_samples(tracks, t_obs, t_pred, 1).unwrap()
}

fn split(tracks: &[TrackRecord], t_obs: usize, t_pred: usize, seed: u64) -> Splits {
    let s = split_by_scene(tracks, 0.1, 0.1, seed).unwrap();
    Splits {
        train: windows(&s.train, t_obs, t_pred),
        val: windows(&s.val, t_obs, t_pred),
        test: windows(&s.test, t_obs, t_pred),
    }
}

// ---------------------------------------------------------------- A1

fn a1_gradient_exactness() -> Verdict {
    let start = Instant::now();
    let tracks = synth_generate(&SynthSpec {
        n_tracks: 8,
        duration: 4.0,
        noise_sigma: 0.01,
        sitting_fraction: 0.5,
        tracks_per_scene: 8,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let samples = windows(&tracks, 4, 3);
    assert!(samples.len() >= 8);
    let model = PvLstmModel::new(ModelConfig {
        hidden: 8,
        t_obs: 4,
        t_pred: 3,
        use_velocity_encoder: true,
        n_attr_classes: 3,
        seed: 3,
    })
    .unwrap();
    let cfg = TrainConfig {
        multi_task: true,
        ..Default::default()
    };
    let refs: Vec<&Sample> = samples.iter().collect();
    let (_, grads) = batch_gradient(&model, &refs, &cfg).unwrap();
    let mut probe = model.clone();
    let check = grad_check_with(
        &model.params.flatten(),
        &grads.flatten(),
        1e-3,
        Stencil::Central4,
        |f| {
            probe.params.assign_flat(f);
            evaluate_loss(&probe, &samples, &cfg).unwrap().total
        },
    )
    .unwrap();
    let elapsed = start.elapsed();
    (
        check.max_rel_error < 1e-5 && elapsed < Duration::from_secs(60),
        format!(
            "max relative error {:.3e} over {} entries (worst {:?}), {:.1}s",
            check.max_rel_error,
            grads.num_params(),
            model.params.locate(check.worst_index),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- A2 / A9

fn a2_spec() -> SynthSpec {
    SynthSpec {
        n_tracks: 1000,
        fps: 2.0,
        duration: 4.0,
        mix: RegimeMix {
            constant_velocity: 1.0,
            stop_and_go: 0.0,
            turning: 0.0,
            standing: 0.0,
        },
        speed: [0.5, 1.5],
        noise_sigma: 0.01,
        tracks_per_scene: 10,
        seed: 2024,
        ..Default::default()
    }
}

fn a2_model_config() -> ModelConfig {
    ModelConfig {
        hidden: 64,
        t_obs: 4,
        t_pred: 4,
        use_velocity_encoder: true,
        n_attr_classes: 0,
        seed: 7,
    }
}

fn a2_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        batch: 32,
        seed: 7,
        ..Default::default()
    }
}

struct A2Run {
    splits: Splits,
    result: FitResult,
    checkpoint: Vec<u8>,
    history_csv: String,
    elapsed: Duration,
}

fn run_a2(dir: &Path) -> A2Run {
    let start = Instant::now();
    let tracks = synth_generate(&a2_spec()).unwrap();
    let splits = split(&tracks, 4, 4, 2024);
    let model = PvLstmModel::new(a2_model_config()).unwrap();
    let result = fit(model, &splits.train, &splits.val, &a2_train_config(), Some(dir)).unwrap();
    let checkpoint = std::fs::read(result.checkpoint.as_ref().unwrap()).unwrap();
    let history_csv = result.history.to_csv();
    A2Run {
        splits,
        result,
        checkpoint,
        history_csv,
        elapsed: start.elapsed(),
    }
}

fn a2_learns_constant_velocity(run: &A2Run) -> Verdict {
    let pv = evaluate_model(&run.result.model, &run.splits.test, true).unwrap();
    let zv = evaluate_zero_vel(&run.splits.test, 4).unwrap();
    (
        pv.ade < 0.2 && zv.ade > 0.5 && run.elapsed < Duration::from_secs(600),
        format!(
            "PV-LSTM ADE {:.4} m, Zero-Vel ADE {:.4} m on {} test windows ({} train), best epoch {:?}, {:.1}s",
            pv.ade,
            zv.ade,
            run.splits.test.len(),
            run.splits.train.len(),
            run.result.best_epoch,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn a9_determinism(first: &A2Run) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let second = run_a2(dir.path());
    let same_history = first.history_csv == second.history_csv;
    let same_ckpt = first.checkpoint == second.checkpoint;
    (
        same_history && same_ckpt,
        format!(
            "history identical: {same_history}, checkpoint identical: {same_ckpt} ({} bytes)",
            first.checkpoint.len()
        ),
    )
}

// ---------------------------------------------------------------- A3

fn a3_baseline_ordering() -> Verdict {
    let tracks = synth_generate(&SynthSpec {
        n_tracks: 600,
        fps: 2.0,
        duration: 8.0,
        noise_sigma: 0.01,
        tracks_per_scene: 10,
        seed: 303,
        ..Default::default()
    })
    .unwrap();
    let splits = split(&tracks, 4, 4, 303);
    let cfg = TrainConfig {
        epochs: 40,
        batch: 64,
        seed: 3,
        ..Default::default()
    };
    let base = ModelConfig {
        hidden: 32,
        t_obs: 4,
        t_pred: 4,
        use_velocity_encoder: true,
        n_attr_classes: 0,
        seed: 3,
    };
    let pv = fit(
        PvLstmModel::new(base.clone()).unwrap(),
        &splits.train,
        &splits.val,
        &cfg,
        None,
    )
    .unwrap();
    let p_cfg = ModelConfig {
        use_velocity_encoder: false,
        ..base
    };
    let p = fit(PvLstmModel::new(p_cfg).unwrap(), &splits.train, &splits.val, &cfg, None).unwrap();
    let pv_ade = evaluate_model(&pv.model, &splits.test, true).unwrap().ade;
    let p_ade = evaluate_model(&p.model, &splits.test, true).unwrap().ade;
    let zv_ade = evaluate_zero_vel(&splits.test, 4).unwrap().ade;
    (
        pv_ade < zv_ade && pv_ade <= 1.10 * p_ade,
        format!(
            "ADE PV-LSTM {pv_ade:.4}, P-LSTM {p_ade:.4}, Zero-Vel {zv_ade:.4} on {} test windows",
            splits.test.len()
        ),
    )
}

// ---------------------------------------------------------------- A4

fn dyadic(rng: &mut ChaCha8Rng, lo: i64, hi: i64, denom: f64) -> f64 {
    rng.random_range(lo..=hi) as f64 / denom
}

fn random_pair(rng: &mut ChaCha8Rng) -> (BBox3d, BBox3d) {
    let mut b = || {
        BBox3d::new(
            dyadic(rng, 0, 2048, 1024.0),
            dyadic(rng, 0, 2048, 1024.0),
            dyadic(rng, 0, 2048, 1024.0),
            dyadic(rng, 32, 160, 64.0),
            dyadic(rng, 32, 160, 64.0),
            dyadic(rng, 32, 160, 64.0),
        )
    };
    (b(), b())
}

fn a4_iou_correctness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    let mut symmetric = true;
    let mut invariant = true;
    for k in 0..100u64 {
        let (a, b) = random_pair(&mut rng);
        let exact = iou3d(&a, &b).unwrap();
        if exact > 0.0 {
            overlapping += 1;
        }
        let mc = mc_iou_oracle(&a, &b, 1_000_000, 1000 + k).unwrap();
        worst = worst.max((exact - mc).abs());
        symmetric &= exact.to_bits() == iou3d(&b, &a).unwrap().to_bits();
        let t = [
            rng.random_range(-100..=100) as f64,
            rng.random_range(-100..=100) as f64,
            rng.random_range(-100..=100) as f64,
        ];
        let shift = |x: &BBox3d| BBox3d {
            x: x.x + t[0],
            y: x.y + t[1],
            z: x.z + t[2],
            ..*x
        };
        invariant &= exact.to_bits() == iou3d(&shift(&a), &shift(&b)).unwrap().to_bits();
    }
    let elapsed = start.elapsed();
    (
        worst < 5e-3 && symmetric && invariant && elapsed < Duration::from_secs(120),
        format!(
            "max |analytic - MC| {worst:.2e} over 100 pairs ({overlapping} overlapping), symmetric {symmetric}, \
             translation-invariant {invariant}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- A5

fn a5_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let len = rng.random_range(2..=20);
        let seq: Vec<BBox3d> = (0..len)
            .map(|_| BBox3d::from_array(std::array::from_fn(|_| rng.random_range(-50.0..50.0))))
            .collect();
        let back = integrate(&seq[0], &to_velocities(&seq).unwrap());
        for (x, y) in back.iter().zip(&seq[1..]) {
            for (u, v) in x.to_array().iter().zip(y.to_array()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    (
        worst <= 1e-12,
        format!("max abs deviation {worst:.2e} over 10000 sequences"),
    )
}

// ---------------------------------------------------------------- A6

fn a6_zero_model_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut mismatches = 0;
    for k in 0..100 {
        let cfg = ModelConfig {
            hidden: 1 + k % 16,
            t_obs: 2 + k % 5,
            t_pred: 1 + k % 6,
            use_velocity_encoder: k % 2 == 0,
            n_attr_classes: if k % 3 == 0 { 3 } else { 0 },
            seed: k as u64,
        };
        let model = PvLstmModel::zeros(cfg.clone()).unwrap();
        let window: Vec<BBox3d> = (0..cfg.t_obs)
            .map(|_| {
                BBox3d::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.0..40.0),
                    rng.random_range(0.2..1.0),
                    rng.random_range(1.0..2.0),
                    rng.random_range(0.2..1.0),
                )
            })
            .collect();
        let pred = model.predict(&window).unwrap().boxes;
        if pred != zero_vel_predict(&window, cfg.t_pred).unwrap() {
            mismatches += 1;
        }
    }
    (
        mismatches == 0,
        format!("{mismatches} of 100 random windows differ from Zero-Vel"),
    )
}

// ---------------------------------------------------------------- A7

fn a7_scheduler() -> Verdict {
    let cfg = TrainConfig::default();
    let mut state = SchedulerState::new(cfg.lr0);
    let mut drop_at = None;
    for v in 1..=30 {
        state = scheduler_step(&state, 0.25, &cfg);
        if drop_at.is_none() && state.current_lr < cfg.lr0 {
            drop_at = Some((v, state.current_lr));
        }
    }
    let expected = cfg.patience + 2;

    // The same through the training loop: a zero model on stationary
    // pedestrians has zero loss and zero gradient, so validation loss is
    // constant.
    let still: Vec<Sample> = (0..6)
        .map(|i| {
            let b = BBox3d::new(i as f64, 1.0, 10.0, 0.5, 1.7, 0.4);
            Sample {
                scene_id: "still".into(),
                ped_id: i.to_string(),
                start_frame: 0,
                obs: vec![b; 4],
                future: vec![b; 4],
                attr_labels: None,
            }
        })
        .collect();
    let model = PvLstmModel::zeros(ModelConfig {
        hidden: 4,
        ..Default::default()
    })
    .unwrap();
    let run = fit(
        model,
        &still,
        &still,
        &TrainConfig {
            epochs: 14,
            ..cfg.clone()
        },
        None,
    )
    .unwrap();
    let lrs: Vec<f64> = run.history.records.iter().map(|r| r.lr).collect();
    // Rate used in epoch e+1 reflects the e-th validation.
    let loop_drop = lrs.iter().position(|&lr| lr < cfg.lr0);

    let ok = drop_at.map(|(v, lr)| v == expected && (lr - 1e-4).abs() < 1e-18) == Some(true)
        && loop_drop == Some(expected)
        && (lrs[expected] - 1e-4).abs() < 1e-18;
    (
        ok,
        format!("lr drop after validation {drop_at:?} (expected {expected}), training loop rates {lrs:?}"),
    )
}

// ---------------------------------------------------------------- A8

fn a8_multi_task_signal() -> Verdict {
    let start = Instant::now();
    let tracks = synth_generate(&SynthSpec {
        n_tracks: 600,
        fps: 2.0,
        duration: 6.0,
        mix: RegimeMix {
            constant_velocity: 0.5,
            stop_and_go: 0.0,
            turning: 0.0,
            standing: 0.5,
        },
        noise_sigma: 0.01,
        tracks_per_scene: 10,
        seed: 808,
        ..Default::default()
    })
    .unwrap();
    let s = split(&tracks, 4, 4, 808);
    let balance = |v: Vec<Sample>| balance_classes(v, 2, 8).unwrap();
    let (train, val, test) = (balance(s.train), balance(s.val), s.test);
    let model_cfg = ModelConfig {
        hidden: 32,
        t_obs: 4,
        t_pred: 4,
        use_velocity_encoder: true,
        n_attr_classes: 2,
        seed: 8,
    };
    let base = TrainConfig {
        epochs: 30,
        batch: 32,
        seed: 8,
        ..Default::default()
    };
    let acc = |multi_task: bool| {
        let cfg = TrainConfig {
            multi_task,
            ..base.clone()
        };
        let r = fit(PvLstmModel::new(model_cfg.clone()).unwrap(), &train, &val, &cfg, None).unwrap();
        evaluate_model(&r.model, &test, true).unwrap().attr_accuracy.unwrap()
    };
    let single = acc(false);
    let multi = acc(true);
    let elapsed = start.elapsed();
    (
        multi >= single - 0.01 && single >= 0.9 && multi >= 0.9 && elapsed < Duration::from_secs(600),
        format!(
            "final-step accuracy multi-task {:.1}%, single-task {:.1}% on {} test windows, {:.1}s",
            100.0 * multi,
            100.0 * single,
            test.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn a2_run() -> A2Run {
    let dir = tempfile::tempdir().unwrap();
    run_a2(dir.path())
}

fn main() -> ExitCode {
    let selected: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let wants = |id: &str| selected.is_empty() || selected.iter().any(|s| s == id);

    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut run = |id: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if !wants(&id.to_lowercase()) {
            return;
        }
        let v = catch_unwind(AssertUnwindSafe(&mut *f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!("{id} {} {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
        results.push((id, v));
    };

    run("A1", &mut a1_gradient_exactness);
    let a2 = (wants("a2") || wants("a9")).then(a2_run);
    if let Some(a2) = &a2 {
        run("A2", &mut || a2_learns_constant_velocity(a2));
    }
    run("A3", &mut a3_baseline_ordering);
    run("A4", &mut a4_iou_correctness);
    run("A5", &mut a5_round_trip);
    run("A6", &mut a6_zero_model_equivalence);
    run("A7", &mut a7_scheduler);
    run("A8", &mut a8_multi_task_signal);
    if let Some(a2) = &a2 {
        run("A9", &mut || a9_determinism(a2));
    }

    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.0).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
