//! Relation-dropout attention over every relation tuple, scale-wise
//! attention over the surviving tokens, and averaging across scales.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::SnippetSequence;
use crate::error::{Error, Result};
use crate::relation::RelationPlan;
use crate::rng::rng_for;
use crate::tensor::{affine, axpy, Matrix};

use super::block::{self, MixCache, Projection, ProjectionGrad};
use super::params::TranRdParameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Structural ablations of the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    /// Attention inside each relation tuple; when off the block is a
    /// residual MLP.
    pub relation_attention: bool,
    /// Attention across the retained tokens; when off they are just averaged.
    pub scale_attention: bool,
    pub relation_dropout: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self {
            relation_attention: true,
            scale_attention: true,
            relation_dropout: true,
        }
    }
}

impl Switches {
    /// Token-wise MLP followed by plain averaging.
    pub fn mean_pool() -> Self {
        Self {
            relation_attention: false,
            scale_attention: false,
            relation_dropout: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedEmbedding {
    pub vector: Vec<f64>,
    /// One vector per scale, in plan order.
    pub per_scale: Vec<Vec<f64>>,
}

pub fn sequence_matrix(seq: &SnippetSequence) -> Matrix {
    let f = &seq.features;
    Matrix::from_vec(
        f.rows(),
        f.cols(),
        f.as_slice().iter().map(|&v| f64::from(v)).collect(),
    )
}

/// Tokens kept by relation dropout: `max(1, r - floor(beta * r))`.
pub fn retained_count(r: usize, beta: f64) -> usize {
    let dropped = (beta * r as f64).floor() as usize;
    r.saturating_sub(dropped).max(1)
}

/// Positions (ascending) that survive relation dropout.
pub fn relation_dropout(r: usize, beta: f64, rng: &mut impl rand::Rng) -> Vec<usize> {
    let keep = retained_count(r, beta);
    let mut idx = index::sample(rng, r, keep).into_vec();
    idx.sort_unstable();
    idx
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Relation block on a standalone `(r, d)` tuple. Returns the attended
/// tokens, the positions kept by relation dropout, and the kept tokens.
pub fn rd_mhsa(
    tuple: &Matrix,
    params: &TranRdParameters,
    switches: Switches,
    mode: Mode,
    seed: u64,
) -> Result<(Matrix, Vec<usize>, Matrix)> {
    check_finite(tuple, "relation tuple")?;
    let r = tuple.rows;
    if r == 0 || (mode == Mode::Train && r < 2) {
        return Err(Error::InvalidArgument(format!("tuple of {r} tokens")));
    }
    let (y, _, _) = block::attend(
        &params.relation,
        &params.config,
        tuple,
        switches.relation_attention,
    );
    let kept = if mode == Mode::Train && switches.relation_dropout {
        relation_dropout(r, params.config.beta, &mut rng_for(seed, &[0xd409]))
    } else {
        (0..r).collect()
    };
    let retained = y.select_rows(&kept);
    Ok((y, kept, retained))
}

/// Scale block on the retained tokens of one tuple.
pub fn scale_wise_mhsa(
    retained: &Matrix,
    params: &TranRdParameters,
    switches: Switches,
) -> Result<(Matrix, MixCache)> {
    check_finite(retained, "retained tokens")?;
    if retained.rows == 0 {
        return Err(Error::InvalidArgument("no retained tokens".into()));
    }
    let (y, _, cache) = block::attend(
        &params.scale,
        &params.config,
        retained,
        switches.scale_attention,
    );
    Ok((y, cache))
}

pub fn classify(embedding: &[f64], params: &TranRdParameters) -> Result<Vec<f64>> {
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding".into()));
    }
    if embedding.len() != params.config.dim {
        return Err(Error::Shape(format!(
            "embedding has {} dims, model expects {}",
            embedding.len(),
            params.config.dim
        )));
    }
    let x = Matrix::from_vec(1, embedding.len(), embedding.to_vec());
    Ok(affine(&x, &params.classifier_w, Some(&params.classifier_b)).data)
}

struct TupleTrace {
    rows: Vec<usize>,
    relation: MixCache,
    kept: Vec<usize>,
    scale_in: Matrix,
    scale: Option<(Projection, MixCache)>,
    weight: f64,
}

/// Intermediate state kept for [`backward`].
pub struct ForwardTrace {
    input: Matrix,
    relation_proj: Projection,
    tuples: Vec<TupleTrace>,
    switches: Switches,
}

/// Aggregates one sequence. In `Train` mode relation dropout (when enabled)
/// is driven by `dropout_seed`; `Eval` is fully deterministic.
pub fn aggregate(
    seq: &Matrix,
    plan: &RelationPlan,
    params: &TranRdParameters,
    switches: Switches,
    mode: Mode,
    dropout_seed: u64,
) -> Result<AggregatedEmbedding> {
    forward(seq, plan, params, switches, mode, dropout_seed).map(|(e, _)| e)
}

pub fn forward(
    seq: &Matrix,
    plan: &RelationPlan,
    params: &TranRdParameters,
    switches: Switches,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(AggregatedEmbedding, ForwardTrace)> {
    let cfg = &params.config;
    if plan.sequence_length != seq.rows {
        return Err(Error::Shape(format!(
            "plan covers {} snippets, sequence has {}",
            plan.sequence_length, seq.rows
        )));
    }
    if seq.cols != cfg.dim {
        return Err(Error::Shape(format!(
            "sequence has {} dims, model expects {}",
            seq.cols, cfg.dim
        )));
    }
    check_finite(seq, "sequence")?;
    let dropout = mode == Mode::Train && switches.relation_dropout && cfg.beta > 0.0;
    let relation_proj = block::project(&params.relation, seq, switches.relation_attention);
    let n_scales = plan.scale_count() as f64;

    let mut vector = vec![0.0; cfg.dim];
    let mut per_scale = Vec::with_capacity(plan.scale_count());
    let mut tuples = Vec::with_capacity(plan.tuple_count());
    for (s, scale_tuples) in plan.tuples.iter().enumerate() {
        let mut scale_vec = vec![0.0; cfg.dim];
        let per_tuple = 1.0 / scale_tuples.len() as f64;
        for (t, rows) in scale_tuples.iter().enumerate() {
            let (y1, relation) = block::mix(
                &params.relation,
                cfg,
                seq,
                &relation_proj,
                rows,
                switches.relation_attention,
            );
            let kept = if dropout {
                let mut rng = rng_for(dropout_seed, &[s as u64, t as u64]);
                relation_dropout(rows.len(), cfg.beta, &mut rng)
            } else {
                (0..rows.len()).collect()
            };
            let scale_in = y1.select_rows(&kept);
            let (pooled, scale) = if switches.scale_attention {
                let (y2, proj2, cache2) = block::attend(&params.scale, cfg, &scale_in, true);
                (y2.mean_rows(), Some((proj2, cache2)))
            } else {
                (scale_in.mean_rows(), None)
            };
            axpy(per_tuple, &pooled, &mut scale_vec);
            tuples.push(TupleTrace {
                rows: rows.clone(),
                relation,
                kept,
                scale_in,
                scale,
                weight: per_tuple / n_scales,
            });
        }
        axpy(1.0 / n_scales, &scale_vec, &mut vector);
        per_scale.push(scale_vec);
    }
    let trace = ForwardTrace {
        input: seq.clone(),
        relation_proj,
        tuples,
        switches,
    };
    Ok((AggregatedEmbedding { vector, per_scale }, trace))
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to the aggregated vector is `d_embedding`.
pub fn backward(
    params: &TranRdParameters,
    trace: &ForwardTrace,
    d_embedding: &[f64],
    grads: &mut TranRdParameters,
) {
    let cfg = &params.config;
    let sw = trace.switches;
    let mut relation_dproj = ProjectionGrad::zeros_for(&trace.relation_proj);
    let mut dx = Matrix::zeros(trace.input.rows, trace.input.cols);
    for tt in &trace.tuples {
        let r2 = tt.kept.len();
        let mut d_scale_out = Matrix::zeros(r2, cfg.dim);
        for i in 0..r2 {
            axpy(tt.weight / r2 as f64, d_embedding, d_scale_out.row_mut(i));
        }
        let d_scale_in = match &tt.scale {
            Some((proj2, cache2)) => block::attend_backward(
                &params.scale,
                cfg,
                &tt.scale_in,
                proj2,
                cache2,
                &d_scale_out,
                &mut grads.scale,
            ),
            None => d_scale_out,
        };
        let mut d_y1 = Matrix::zeros(tt.rows.len(), cfg.dim);
        for (i, &k) in tt.kept.iter().enumerate() {
            d_y1.row_mut(k).copy_from_slice(d_scale_in.row(i));
        }
        block::mix_backward(
            &params.relation,
            cfg,
            &trace.relation_proj,
            &tt.relation,
            &d_y1,
            &mut grads.relation,
            &mut relation_dproj,
            &mut dx,
        );
    }
    block::project_backward(
        &params.relation,
        &trace.input,
        &trace.relation_proj,
        &relation_dproj,
        sw.relation_attention,
        &mut grads.relation,
        None,
    );
}
