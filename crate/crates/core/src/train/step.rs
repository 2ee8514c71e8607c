//! One optimization step's loss and gradient over an assembled batch.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    contrastive_with_grad, cosine, cross_entropy_with_grad, total_loss, ContrastivePair,
    LossComponents, LossWeights, Positive, PrototypeBank,
};
use crate::model::{forward, ForwardTrace, Mode, Switches, TranRdParameters};
use crate::relation::RelationPlan;
use crate::rng::derive_seed;
use crate::tensor::{axpy, Matrix};

use super::config::CdiaPositive;

/// Inputs of one step, laid out as consecutive row segments: source,
/// few-shot target, synthesized, and the synthesized rows again with their
/// snippets shuffled (one shuffled row per synthesized row).
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Matrix>,
    pub labels: Vec<usize>,
    pub source_count: usize,
    pub target_count: usize,
    pub synth_count: usize,
    /// Per source row: negative rows for the alignment term.
    pub cdia_negatives: Vec<Vec<usize>>,
    /// Per synthesized row: negative rows for the auxiliary term.
    pub aux_negatives: Vec<Vec<usize>>,
    pub dropout_seed: u64,
}

impl Batch {
    pub fn source_rows(&self) -> Range<usize> {
        0..self.source_count
    }

    pub fn target_rows(&self) -> Range<usize> {
        let s = self.source_count;
        s..s + self.target_count
    }

    pub fn synth_rows(&self) -> Range<usize> {
        let s = self.source_count + self.target_count;
        s..s + self.synth_count
    }

    pub fn shuffled_rows(&self) -> Range<usize> {
        let s = self.source_count + self.target_count + self.synth_count;
        s..s + self.synth_count
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.source_count + self.target_count + 2 * self.synth_count;
        if self.inputs.len() != n || self.labels.len() != n {
            return Err(Error::Shape(format!(
                "batch has {} inputs and {} labels, segments need {n}",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if self.cdia_negatives.len() != self.source_count
            || (self.synth_count > 0 && self.aux_negatives.len() != self.synth_count)
        {
            return Err(Error::Shape(
                "negative lists do not match their anchors".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub plan: &'a RelationPlan,
    pub switches: Switches,
    pub mode: Mode,
    pub weights: LossWeights,
    pub prototypes: Option<&'a PrototypeBank>,
    pub cdia_positive: CdiaPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub components: LossComponents,
    pub total: f64,
}

fn contrastive_pairs<'a>(
    anchors: Range<usize>,
    negatives: &[Vec<usize>],
    positive: impl Fn(usize) -> Positive<'a>,
) -> Vec<ContrastivePair<'a>> {
    anchors
        .zip(negatives)
        .filter(|(_, negs)| !negs.is_empty())
        .map(|(anchor, negs)| ContrastivePair {
            anchor,
            positive: positive(anchor),
            negatives: negs.clone(),
        })
        .collect()
}

/// Evaluates every loss term on `batch` and, when `grads` is given,
/// accumulates the gradient of the weighted total into it.
pub fn batch_loss(
    params: &TranRdParameters,
    batch: &Batch,
    ctx: &StepContext<'_>,
    grads: Option<&mut TranRdParameters>,
) -> Result<StepLoss> {
    batch.validate()?;
    let keep_trace = grads.is_some();
    let mut embeddings = Vec::with_capacity(batch.len());
    let mut traces: Vec<ForwardTrace> =
        Vec::with_capacity(if keep_trace { batch.len() } else { 0 });
    for (row, x) in batch.inputs.iter().enumerate() {
        let (e, trace) = forward(
            x,
            ctx.plan,
            params,
            ctx.switches,
            ctx.mode,
            derive_seed(batch.dropout_seed, &[row as u64]),
        )?;
        embeddings.push(e.vector);
        if keep_trace {
            traces.push(trace);
        }
    }

    let w = &ctx.weights;
    let classes = params.config.classes;
    let mut d_emb: Vec<Vec<f64>> = vec![vec![0.0; params.config.dim]; batch.len()];
    let mut c = LossComponents::default();

    // cross-entropy on the three labeled segments
    let mut d_logits: Vec<(usize, Vec<f64>)> = Vec::new();
    for (segment, weight, slot) in [
        (batch.source_rows(), w.w_ce_source, &mut c.ce_source),
        (batch.target_rows(), w.w_ce_target, &mut c.ce_target),
        (batch.synth_rows(), w.w_ce_synth, &mut c.ce_synth),
    ] {
        if segment.is_empty() {
            continue;
        }
        let logits: Vec<Vec<f64>> = segment
            .clone()
            .map(|r| {
                let x = Matrix::from_vec(1, embeddings[r].len(), embeddings[r].clone());
                crate::tensor::affine(&x, &params.classifier_w, Some(&params.classifier_b)).data
            })
            .collect();
        let labels = &batch.labels[segment.clone()];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        let (value, g) = cross_entropy_with_grad(&logits, labels, weight);
        *slot = value;
        if weight != 0.0 {
            d_logits.extend(segment.zip(g));
        }
    }

    if let Some(protos) = ctx.prototypes {
        let source = batch.source_rows();
        let nearest = |r: usize| -> usize {
            (0..protos.prototypes.rows)
                .map(|k| (cosine(&embeddings[r], protos.prototypes.row(k)), k))
                .fold((f64::NEG_INFINITY, 0), |best, cur| {
                    if cur.0 > best.0 {
                        cur
                    } else {
                        best
                    }
                })
                .1
        };
        for r in source.clone() {
            protos.get(batch.labels[r])?;
        }
        let pairs = contrastive_pairs(source, &batch.cdia_negatives, |r| {
            let class = match ctx.cdia_positive {
                CdiaPositive::GroundTruth => batch.labels[r],
                CdiaPositive::NearestCenter => nearest(r),
            };
            Positive::Fixed(protos.prototypes.row(class))
        });
        let g = (w.w_cdia != 0.0).then_some(d_emb.as_mut_slice());
        c.cdia = contrastive_with_grad(&embeddings, &pairs, w.w_cdia, g);
    }

    if batch.synth_count > 0 {
        let offset = batch.shuffled_rows().start - batch.synth_rows().start;
        let pairs = contrastive_pairs(batch.synth_rows(), &batch.aux_negatives, |r| {
            Positive::Row(r + offset)
        });
        let g = (w.w_aux != 0.0).then_some(d_emb.as_mut_slice());
        c.aux = contrastive_with_grad(&embeddings, &pairs, w.w_aux, g);
    }

    let total = total_loss(&c, w)?;

    if let Some(grads) = grads {
        for (r, g) in &d_logits {
            let e = &embeddings[*r];
            for (i, &ei) in e.iter().enumerate() {
                axpy(ei, g, grads.classifier_w.row_mut(i));
                d_emb[*r][i] += crate::tensor::dot(params.classifier_w.row(i), g);
            }
            axpy(1.0, g, &mut grads.classifier_b);
        }
        for (trace, d) in traces.iter().zip(&d_emb) {
            if d.iter().any(|&v| v != 0.0) {
                crate::model::backward(params, trace, d, grads);
            }
        }
    }
    Ok(StepLoss {
        components: c,
        total,
    })
}
