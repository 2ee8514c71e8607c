use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::{aggregate, classify, sequence_matrix, Mode, Switches, TranRdParameters};
use crate::relation::RelationPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Top-1 percentage.
    pub accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

/// Index of the largest logit; ties go to the lower class.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_from_logits(
    logits: &[Vec<f64>],
    labels: &[usize],
    class_count: usize,
) -> (f64, Vec<Option<f64>>, Vec<usize>) {
    let predictions: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
    let mut hits = vec![0usize; class_count];
    let mut totals = vec![0usize; class_count];
    for (&p, &l) in predictions.iter().zip(labels) {
        totals[l] += 1;
        hits[l] += usize::from(p == l);
    }
    let correct: usize = hits.iter().sum();
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| 100.0 * h as f64 / n as f64))
        .collect();
    (
        100.0 * correct as f64 / labels.len().max(1) as f64,
        per_class,
        predictions,
    )
}

/// Eval-mode accuracy on `test` with the tuple plan fixed by `plan_seed`.
pub fn evaluate(
    params: &TranRdParameters,
    switches: Switches,
    test: &FeatureDataset,
    plan_seed: u64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    if test.dim() != params.config.dim || test.class_count() != params.config.classes {
        return Err(Error::Shape(format!(
            "test set is (d={}, C={}), model is (d={}, C={})",
            test.dim(),
            test.class_count(),
            params.config.dim,
            params.config.classes
        )));
    }
    let plan = RelationPlan::sample(
        test.snippet_count(),
        Some(params.config.tuples_per_scale),
        plan_seed,
    )?;
    let logits = test
        .sequences()
        .iter()
        .map(|s| {
            let e = aggregate(&sequence_matrix(s), &plan, params, switches, Mode::Eval, 0)?;
            classify(&e.vector, params)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = test.labels();
    let (accuracy, per_class_accuracy, predictions) =
        accuracy_from_logits(&logits, &labels, test.class_count());
    Ok(EvalReport {
        accuracy,
        per_class_accuracy,
        sample_ids: test
            .sequences()
            .iter()
            .map(|s| s.sample_id.clone())
            .collect(),
        labels,
        predictions,
        logits,
    })
}
