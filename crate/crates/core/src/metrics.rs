//! Displacement and volumetric-overlap metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::BBox3d;

fn check_lengths(pred: &[BBox3d], gt: &[BBox3d]) -> Result<()> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::arg(format!(
            "prediction and ground truth need equal non-zero lengths ({} vs {})",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

pub fn center_distance(a: &BBox3d, b: &BBox3d) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Mean and final Euclidean distance between box centers.
pub fn ade_fde(pred: &[BBox3d], gt: &[BBox3d]) -> Result<(f64, f64)> {
    check_lengths(pred, gt)?;
    let d: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_distance(p, g)).collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, d[d.len() - 1]))
}

/// Axis-aligned volumetric IoU. Zero whenever the union has no volume.
pub fn iou3d(a: &BBox3d, b: &BBox3d) -> Result<f64> {
    for bx in [a, b] {
        if !bx.is_valid() {
            return Err(Error::arg(format!("box with negative or non-finite extent: {bx:?}")));
        }
    }
    let (ca, sa, cb, sb) = (a.center(), a.size(), b.center(), b.size());
    let mut inter = 1.0;
    for k in 0..3 {
        let (lo_a, hi_a) = (ca[k] - sa[k] / 2.0, ca[k] + sa[k] / 2.0);
        let (lo_b, hi_b) = (cb[k] - sb[k] / 2.0, cb[k] + sb[k] / 2.0);
        // Nested intervals overlap by the inner size exactly, so identical
        // boxes score 1 without rounding.
        let a_in_b = lo_b <= lo_a && hi_a <= hi_b;
        let b_in_a = lo_a <= lo_b && hi_b <= hi_a;
        inter *= match (a_in_b, b_in_a) {
            (true, true) => sa[k].min(sb[k]),
            (true, false) => sa[k],
            (false, true) => sb[k],
            (false, false) => (hi_a.min(hi_b) - lo_a.max(lo_b)).max(0.0),
        };
    }
    let union = a.w * a.h * a.d + b.w * b.h * b.d - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Mean and final-step IoU.
pub fn aiou_fiou(pred: &[BBox3d], gt: &[BBox3d]) -> Result<(f64, f64)> {
    check_lengths(pred, gt)?;
    let ious = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| iou3d(p, g))
        .collect::<Result<Vec<f64>>>()?;
    Ok((ious.iter().sum::<f64>() / ious.len() as f64, ious[ious.len() - 1]))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of steps whose argmax class equals the label. With
/// `final_only`, only the last step of each sequence is scored.
pub fn attr_accuracy(pred_probs: &[Vec<Vector>], labels: &[Vec<usize>], final_only: bool) -> Result<f64> {
    if pred_probs.is_empty() {
        return Err(Error::arg("attribute accuracy of an empty set"));
    }
    if pred_probs.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} prediction sequences but {} label sequences",
            pred_probs.len(),
            labels.len()
        )));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (probs, labs) in pred_probs.iter().zip(labels) {
        if probs.len() != labs.len() || probs.is_empty() {
            return Err(Error::arg("prediction and label sequences must align and be non-empty"));
        }
        let start = if final_only { probs.len() - 1 } else { 0 };
        for (p, &l) in probs[start..].iter().zip(&labs[start..]) {
            hits += usize::from(argmax(p) == l);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Monte-Carlo IoU estimate from `n` uniform points in the joint bounding
/// hull of both boxes. Test oracle only.
pub fn mc_iou_oracle(a: &BBox3d, b: &BBox3d, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("Monte-Carlo IoU needs at least one sample"));
    }
    let lo_hi = |bx: &BBox3d| {
        let (c, s) = (bx.center(), bx.size());
        (
            [c[0] - s[0] / 2.0, c[1] - s[1] / 2.0, c[2] - s[2] / 2.0],
            [c[0] + s[0] / 2.0, c[1] + s[1] / 2.0, c[2] + s[2] / 2.0],
        )
    };
    let (alo, ahi) = lo_hi(a);
    let (blo, bhi) = lo_hi(b);
    let lo: [f64; 3] = std::array::from_fn(|k| alo[k].min(blo[k]));
    let hi: [f64; 3] = std::array::from_fn(|k| ahi[k].max(bhi[k]));
    if (0..3).any(|k| hi[k].partial_cmp(&lo[k]) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::arg("Monte-Carlo IoU hull has no volume"));
    }
    let inside = |p: &[f64; 3], l: &[f64; 3], h: &[f64; 3]| (0..3).all(|k| p[k] >= l[k] && p[k] <= h[k]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut both, mut either) = (0u64, 0u64);
    for _ in 0..n {
        let p: [f64; 3] = std::array::from_fn(|k| rng.random_range(lo[k]..hi[k]));
        let (ia, ib) = (inside(&p, &alo, &ahi), inside(&p, &blo, &bhi));
        both += u64::from(ia && ib);
        either += u64::from(ia || ib);
    }
    if either == 0 {
        return Err(Error::arg("no Monte-Carlo sample fell inside either box"));
    }
    Ok(both as f64 / either as f64)
}

/// Metrics at one prediction step, averaged over samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub step: usize,
    pub displacement: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade: f64,
    pub fde: f64,
    pub aiou: f64,
    pub fiou: f64,
    pub attr_accuracy: Option<f64>,
    pub n_samples: usize,
    /// Predicted boxes with a negative or non-finite extent. Each scores
    /// IoU 0 at its step.
    pub invalid_pred_boxes: usize,
    pub horizon: Vec<HorizonRow>,
}

impl EvalReport {
    /// Per-sample metrics averaged (unweighted) over samples. Ground truth
    /// must be valid; invalid predictions are counted, not rejected.
    pub fn compute(preds: &[Vec<BBox3d>], gts: &[Vec<BBox3d>]) -> Result<Self> {
        if preds.is_empty() || preds.len() != gts.len() {
            return Err(Error::arg(format!(
                "evaluation needs matching non-empty sets ({} predictions, {} ground truths)",
                preds.len(),
                gts.len()
            )));
        }
        let steps = gts[0].len();
        let n = preds.len() as f64;
        let (mut ade, mut fde, mut aiou, mut fiou) = (0.0, 0.0, 0.0, 0.0);
        let mut disp = vec![0.0; steps];
        let mut ious = vec![0.0; steps];
        let mut invalid = 0;
        for (p, g) in preds.iter().zip(gts) {
            if g.len() != steps {
                return Err(Error::arg("ground-truth sequences differ in length"));
            }
            let (a, f) = ade_fde(p, g)?;
            ade += a;
            fde += f;
            let mut step_iou = Vec::with_capacity(steps);
            for k in 0..steps {
                if !g[k].is_valid() {
                    return Err(Error::arg(format!("invalid ground-truth box {:?}", g[k])));
                }
                let iou = if p[k].is_valid() {
                    iou3d(&p[k], &g[k])?
                } else {
                    invalid += 1;
                    0.0
                };
                disp[k] += center_distance(&p[k], &g[k]);
                ious[k] += iou;
                step_iou.push(iou);
            }
            aiou += step_iou.iter().sum::<f64>() / steps as f64;
            fiou += step_iou[steps - 1];
        }
        Ok(EvalReport {
            ade: ade / n,
            fde: fde / n,
            aiou: aiou / n,
            fiou: fiou / n,
            attr_accuracy: None,
            n_samples: preds.len(),
            invalid_pred_boxes: invalid,
            horizon: (0..steps)
                .map(|k| HorizonRow {
                    step: k + 1,
                    displacement: disp[k] / n,
                    iou: ious[k] / n,
                })
                .collect(),
        })
    }
}
