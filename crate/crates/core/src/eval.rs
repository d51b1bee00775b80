//! Running a predictor over a sample set and scoring it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::metrics::{attr_accuracy, EvalReport};
use crate::model::{zero_vel_predict, BBox3d, PvLstmModel};

/// Predicted boxes (and attribute distributions, when the model has them)
/// for every sample, in input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub boxes: Vec<Vec<BBox3d>>,
    pub attrs: Option<Vec<Vec<Vector>>>,
}

pub fn predict_samples(model: &PvLstmModel, samples: &[Sample]) -> Result<Predictions> {
    let out = samples
        .par_iter()
        .map(|s| model.predict(&s.obs))
        .collect::<Result<Vec<_>>>()?;
    let attrs = model
        .config
        .has_attributes()
        .then(|| out.iter().map(|p| p.attrs.clone().unwrap_or_default()).collect());
    Ok(Predictions {
        boxes: out.into_iter().map(|p| p.boxes).collect(),
        attrs,
    })
}

pub fn zero_vel_samples(samples: &[Sample], t_pred: usize) -> Result<Vec<Vec<BBox3d>>> {
    samples.iter().map(|s| zero_vel_predict(&s.obs, t_pred)).collect()
}

fn ground_truth(samples: &[Sample]) -> Vec<Vec<BBox3d>> {
    samples.iter().map(|s| s.future.clone()).collect()
}

/// Box metrics plus, when the model predicts attributes and every sample
/// is labelled, attribute accuracy.
pub fn evaluate_model(model: &PvLstmModel, samples: &[Sample], attr_final_only: bool) -> Result<EvalReport> {
    let preds = predict_samples(model, samples)?;
    let mut report = EvalReport::compute(&preds.boxes, &ground_truth(samples))?;
    if let Some(attrs) = &preds.attrs {
        let labels: Option<Vec<Vec<usize>>> = samples.iter().map(|s| s.attr_labels.clone()).collect();
        if let Some(labels) = labels {
            report.attr_accuracy = Some(attr_accuracy(attrs, &labels, attr_final_only)?);
        }
    }
    Ok(report)
}

pub fn evaluate_zero_vel(samples: &[Sample], t_pred: usize) -> Result<EvalReport> {
    if samples.iter().any(|s| s.future.len() != t_pred) {
        return Err(Error::arg(format!("all samples need {t_pred} future boxes")));
    }
    EvalReport::compute(&zero_vel_samples(samples, t_pred)?, &ground_truth(samples))
}
