//! Co-training over source, few-shot target, and synthesized sequences.

mod config;
mod eval;
mod optim;
mod step;

pub use config::{Ablation, CdiaPositive, ExperimentConfig, NegativePool};
pub use eval::{accuracy_from_logits, argmax, evaluate, EvalReport};
pub use optim::Adam;
pub use step::{batch_loss, Batch, StepContext, StepLoss};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::Result;
use crate::losses::{compute_prototypes, LossComponents, PrototypeBank};
use crate::model::{aggregate, sequence_matrix, Mode, Switches, TranRdParameters};
use crate::relation::RelationPlan;
use crate::rng::{derive_seed, rng_for};
use crate::sdfm::{build_synthesized_set, compute_source_statistics};
use crate::tensor::Matrix;

const TAG_INIT: u64 = 1;
const TAG_SYNTH: u64 = 2;
const TAG_PLAN: u64 = 3;
const TAG_EVAL_PLAN: u64 = 4;
const TAG_BATCH: u64 = 5;
const TAG_SHUFFLE: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub components: LossComponents,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Means over the epoch's steps.
    pub components: LossComponents,
    pub total: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: TranRdParameters,
    pub switches: Switches,
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
    /// Evaluation after the last epoch, when a test set was given.
    pub final_eval: Option<EvalReport>,
    pub synthesized_count: usize,
}

/// Plan seed used for the evaluation that follows training.
pub fn eval_plan_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.seed, &[TAG_EVAL_PLAN])
}

struct Pools {
    source: Vec<(Matrix, usize)>,
    target: Vec<(Matrix, usize)>,
    synth: Vec<(Matrix, usize)>,
}

fn matrices(ds: &FeatureDataset) -> Vec<(Matrix, usize)> {
    ds.sequences()
        .iter()
        .map(|s| (sequence_matrix(s), s.label))
        .collect()
}

/// Draws `count` rows uniformly without replacement from those in `pool`
/// whose label differs from `label`.
fn draw_negatives(
    pool: &[usize],
    labels: &[usize],
    label: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let eligible: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&r| labels[r] != label)
        .collect();
    let take = count.min(eligible.len());
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), take)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn assemble_batch(
    pools: &Pools,
    source_ids: &[usize],
    config: &ExperimentConfig,
    step_seed: u64,
) -> Batch {
    let mut rng = rng_for(step_seed, &[]);
    let n = config.batch_size;
    let target_ids: Vec<usize> = if pools.target.is_empty() {
        Vec::new()
    } else if pools.target.len() >= n {
        index::sample(&mut rng, pools.target.len(), n).into_vec()
    } else {
        (0..n)
            .map(|_| rng.random_range(0..pools.target.len()))
            .collect()
    };
    let synth_ids: Vec<usize> = if pools.synth.is_empty() {
        Vec::new()
    } else {
        index::sample(&mut rng, pools.synth.len(), n.min(pools.synth.len())).into_vec()
    };

    let mut inputs = Vec::with_capacity(source_ids.len() + target_ids.len() + 2 * synth_ids.len());
    let mut labels = Vec::with_capacity(inputs.capacity());
    for (pool, ids) in [
        (&pools.source, source_ids),
        (&pools.target, &target_ids),
        (&pools.synth, &synth_ids),
    ] {
        for &i in ids {
            inputs.push(pool[i].0.clone());
            labels.push(pool[i].1);
        }
    }
    for &i in &synth_ids {
        let (m, l) = &pools.synth[i];
        let mut order: Vec<usize> = (0..m.rows).collect();
        order.shuffle(&mut rng);
        inputs.push(m.select_rows(&order));
        labels.push(*l);
    }

    let (ns, nt, ng) = (source_ids.len(), target_ids.len(), synth_ids.len());
    let mut negative_pool: Vec<usize> = (0..ns).collect();
    if config.negatives_pool == NegativePool::Mixed {
        negative_pool.extend(ns + nt..ns + nt + ng);
    }
    let k = config.negatives_per_anchor;
    let cdia_negatives = (0..ns)
        .map(|r| draw_negatives(&negative_pool, &labels, labels[r], k, &mut rng))
        .collect();
    let aux_negatives = (ns + nt..ns + nt + ng)
        .map(|r| draw_negatives(&negative_pool, &labels, labels[r], k, &mut rng))
        .collect();
    Batch {
        inputs,
        labels,
        source_count: ns,
        target_count: nt,
        synth_count: ng,
        cdia_negatives,
        aux_negatives,
        dropout_seed: rng.random(),
    }
}

fn prototypes(
    params: &TranRdParameters,
    switches: Switches,
    plan: &RelationPlan,
    target: &[(Matrix, usize)],
    epoch: usize,
) -> Result<PrototypeBank> {
    let embeddings = target
        .iter()
        .map(|(m, _)| aggregate(m, plan, params, switches, Mode::Eval, 0).map(|e| e.vector))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = target.iter().map(|(_, l)| *l).collect();
    compute_prototypes(&embeddings, &labels, params.config.classes, epoch)
}

fn mean_components(records: &[StepRecord]) -> (LossComponents, f64) {
    let n = records.len().max(1) as f64;
    let mut c = LossComponents::default();
    let mut total = 0.0;
    for r in records {
        c.cdia += r.components.cdia / n;
        c.ce_source += r.components.ce_source / n;
        c.ce_target += r.components.ce_target / n;
        c.ce_synth += r.components.ce_synth / n;
        c.aux += r.components.aux / n;
        total += r.total / n;
    }
    (c, total)
}

/// Trains the aggregator and classifier. `target_fewshot` is ignored when
/// the configuration trains on source only; `test` (if any) is evaluated
/// after the last epoch and every `eval_every` epochs.
pub fn train(
    source: &FeatureDataset,
    target_fewshot: &FeatureDataset,
    config: &ExperimentConfig,
    test: Option<&FeatureDataset>,
) -> Result<TrainOutput> {
    config.validate()?;
    source.ensure_compatible(target_fewshot)?;
    if let Some(t) = test {
        source.ensure_compatible(t)?;
    }
    let ablation = config.ablation;
    let switches = ablation.switches();
    let weights = config.effective_weights();
    let model_cfg = config.model_config(source.dim(), source.class_count());
    let mut params = TranRdParameters::init(model_cfg, derive_seed(config.seed, &[TAG_INIT]))?;
    let mut opt = Adam::new(params.parameter_count());

    let stats = if ablation.uses_synthesized() {
        Some(compute_source_statistics(source)?)
    } else {
        None
    };
    let build_synth = |epoch: usize| -> Result<Vec<(Matrix, usize)>> {
        match &stats {
            Some(st) => Ok(matrices(&build_synthesized_set(
                target_fewshot,
                st,
                config.top_k,
                config.alpha,
                config.per_class_synth,
                derive_seed(config.seed, &[TAG_SYNTH, epoch as u64]),
            )?)),
            None => Ok(Vec::new()),
        }
    };
    let mut pools = Pools {
        source: matrices(source),
        target: if ablation.uses_target() {
            matrices(target_fewshot)
        } else {
            Vec::new()
        },
        synth: build_synth(0)?,
    };
    let synthesized_count = pools.synth.len();
    let steps_per_epoch = config
        .steps_per_epoch
        .unwrap_or_else(|| source.len().div_ceil(config.batch_size));

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = Vec::with_capacity(config.epochs * steps_per_epoch);
    let mut final_eval = None;
    let mut order: Vec<usize> = (0..pools.source.len()).collect();
    let mut cursor = order.len();
    let mut shuffle_rng = rng_for(config.seed, &[TAG_SHUFFLE]);
    for epoch in 0..config.epochs {
        if epoch > 0 && config.refresh_synth {
            pools.synth = build_synth(epoch)?;
        }
        let lr = config.learning_rate(epoch);
        let plan = RelationPlan::sample(
            source.snippet_count(),
            Some(config.tuples_per_scale),
            derive_seed(config.seed, &[TAG_PLAN, epoch as u64]),
        )?;
        let bank = if ablation.uses_cdia() {
            Some(prototypes(&params, switches, &plan, &pools.target, epoch)?)
        } else {
            None
        };
        let ctx = StepContext {
            plan: &plan,
            switches,
            mode: Mode::Train,
            weights,
            prototypes: bank.as_ref(),
            cdia_positive: config.cdia_positive,
        };
        let first = steps.len();
        for _ in 0..steps_per_epoch {
            let mut ids = Vec::with_capacity(config.batch_size);
            while ids.len() < config.batch_size.min(order.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                ids.push(order[cursor]);
                cursor += 1;
            }
            let step = steps.len();
            let batch = assemble_batch(
                &pools,
                &ids,
                config,
                derive_seed(config.seed, &[TAG_BATCH, step as u64]),
            );
            let mut grads = params.zeros_like();
            let loss = batch_loss(&params, &batch, &ctx, Some(&mut grads))?;
            opt.update(&mut params, &grads, lr);
            steps.push(StepRecord {
                step,
                components: loss.components,
                total: loss.total,
            });
        }
        let (components, total) = mean_components(&steps[first..]);
        let last = epoch + 1 == config.epochs;
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        let test_accuracy = match test {
            Some(t) if last || due => {
                let report = evaluate(&params, switches, t, eval_plan_seed(config))?;
                let acc = report.accuracy;
                if last {
                    final_eval = Some(report);
                }
                Some(acc)
            }
            _ => None,
        };
        log::debug!("epoch {epoch}: loss {total:.5} acc {test_accuracy:?}");
        epochs.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            components,
            total,
            test_accuracy,
        });
    }
    Ok(TrainOutput {
        params,
        switches,
        epochs,
        steps,
        final_eval,
        synthesized_count,
    })
}
