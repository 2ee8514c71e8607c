use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{HeadCombine, ModelConfig, Switches};

/// Where contrastive negatives are drawn from within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativePool {
    /// Source and synthesized embeddings.
    #[default]
    Mixed,
    SourceOnly,
}

impl std::str::FromStr for NegativePool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "source_only" => Ok(Self::SourceOnly),
            _ => Err(Error::Config(format!(
                "unknown negative pool '{s}' (expected mixed or source_only)"
            ))),
        }
    }
}

/// Which target prototype a source anchor is pulled toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CdiaPositive {
    /// The prototype of the anchor's own class.
    #[default]
    GroundTruth,
    /// Whichever prototype is nearest (cosine) to the anchor.
    NearestCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Ablation {
    pub disable_rd_mhsa: bool,
    pub disable_scale_mhsa: bool,
    pub disable_rd: bool,
    pub disable_sdfm: bool,
    pub disable_cdia: bool,
    /// Train on source only: no target data and no adaptation terms.
    pub source_only: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 8] = [
        "rd_mhsa",
        "scale_mhsa",
        "rd",
        "tran_rd",
        "sdfm",
        "cdia",
        "source_only",
        "all",
    ];

    /// Turns on the flag(s) called `name`. `tran_rd` switches off the
    /// whole aggregator (mean-pool fallback); `all` sets every flag except
    /// `source_only`.
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name.trim() {
            "rd_mhsa" => self.disable_rd_mhsa = true,
            "scale_mhsa" => self.disable_scale_mhsa = true,
            "rd" => self.disable_rd = true,
            "tran_rd" => {
                self.disable_rd_mhsa = true;
                self.disable_scale_mhsa = true;
                self.disable_rd = true;
            }
            "sdfm" => self.disable_sdfm = true,
            "cdia" => self.disable_cdia = true,
            "source_only" => self.source_only = true,
            "all" => {
                let source_only = self.source_only;
                *self = Self {
                    disable_rd_mhsa: true,
                    disable_scale_mhsa: true,
                    disable_rd: true,
                    disable_sdfm: true,
                    disable_cdia: true,
                    source_only,
                };
            }
            "" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation '{other}' (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses a comma-separated list.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut out = Self::default();
        for name in list.split(',') {
            out.enable(name)?;
        }
        Ok(out)
    }

    /// Short name: `full`, or the disabled parts joined by `+`.
    pub fn label(&self) -> String {
        if self.source_only {
            return "source_only".into();
        }
        let parts: Vec<&str> = [
            (self.disable_rd_mhsa, "rd_mhsa"),
            (self.disable_scale_mhsa, "scale_mhsa"),
            (self.disable_rd, "rd"),
            (self.disable_sdfm, "sdfm"),
            (self.disable_cdia, "cdia"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "full".into()
        } else {
            format!("no_{}", parts.join("+"))
        }
    }

    pub fn switches(&self) -> Switches {
        Switches {
            relation_attention: !self.disable_rd_mhsa,
            scale_attention: !self.disable_scale_mhsa,
            relation_dropout: !self.disable_rd,
        }
    }

    pub fn uses_target(&self) -> bool {
        !self.source_only
    }

    pub fn uses_synthesized(&self) -> bool {
        !self.source_only && !self.disable_sdfm
    }

    pub fn uses_cdia(&self) -> bool {
        !self.source_only && !self.disable_cdia
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub shot_count: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Optimizer steps per epoch; `None` means one pass over the source set.
    pub steps_per_epoch: Option<usize>,
    pub weights: LossWeights,
    /// Source class centers blended into each synthesized mean.
    pub top_k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub heads: usize,
    pub head_combine: HeadCombine,
    pub tuples_per_scale: usize,
    pub per_class_synth: usize,
    /// Rebuild the synthesized set at the start of every epoch.
    pub refresh_synth: bool,
    pub negatives_pool: NegativePool,
    pub negatives_per_anchor: usize,
    pub cdia_positive: CdiaPositive,
    pub ablation: Ablation,
    /// Evaluate on the test set every this many epochs (0: final epoch only).
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            shot_count: 5,
            seed: 0,
            epochs: 100,
            batch_size: 32,
            initial_lr: 1e-4,
            lr_decay_epochs: vec![60, 80],
            lr_decay_factor: 0.1,
            steps_per_epoch: None,
            weights: LossWeights::default(),
            top_k: 2,
            alpha: 0.21,
            beta: 0.5,
            heads: 8,
            head_combine: HeadCombine::Sum,
            tuples_per_scale: 3,
            per_class_synth: 200,
            refresh_synth: false,
            negatives_pool: NegativePool::Mixed,
            negatives_per_anchor: 15,
            cdia_positive: CdiaPositive::GroundTruth,
            ablation: Ablation::default(),
            eval_every: 0,
        }
    }
}

impl ExperimentConfig {
    /// A shortened schedule for desk-scale runs: 8 epochs at a tenfold
    /// initial rate, decaying at the same relative points (60% and 80%).
    pub fn desk_scale() -> Self {
        Self {
            epochs: 8,
            initial_lr: 1e-3,
            lr_decay_epochs: vec![4, 6],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if self.shot_count == 0 && self.ablation.uses_target() {
            return bad("shot_count must be >= 1".into());
        }
        if !(self.initial_lr > 0.0) || !(self.lr_decay_factor > 0.0) {
            return bad("learning rate and decay factor must be positive".into());
        }
        if self.top_k == 0 || !(self.alpha > 0.0) {
            return bad("top_k must be >= 1 and alpha > 0".into());
        }
        if self.negatives_per_anchor == 0 || self.per_class_synth == 0 {
            return bad("negatives_per_anchor and per_class_synth must be >= 1".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be >= 1".into());
        }
        let w = &self.weights;
        if [
            w.w_cdia,
            w.w_ce_source,
            w.w_ce_target,
            w.w_ce_synth,
            w.w_aux,
        ]
        .iter()
        .any(|v| !(*v >= 0.0))
        {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial_lr * self.lr_decay_factor.powi(decays as i32)
    }

    /// Loss weights with the terms of disabled components zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let a = &self.ablation;
        let mut w = self.weights;
        if !a.uses_cdia() {
            w.w_cdia = 0.0;
        }
        if !a.uses_target() {
            w.w_ce_target = 0.0;
        }
        if !a.uses_synthesized() {
            w.w_ce_synth = 0.0;
            w.w_aux = 0.0;
        }
        w
    }

    pub fn model_config(&self, dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            heads: self.heads,
            beta: self.beta,
            combine: self.head_combine,
            tuples_per_scale: self.tuples_per_scale,
            ..ModelConfig::new(dim, classes)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.initial_lr), (100, 32, 1e-4));
        assert_eq!(c.lr_decay_epochs, vec![60, 80]);
        assert_eq!(
            (c.top_k, c.alpha, c.beta, c.heads, c.per_class_synth),
            (2, 0.21, 0.5, 8, 200)
        );
        assert_eq!(c.weights, LossWeights::default());
        assert_eq!(c.negatives_pool, NegativePool::Mixed);
        c.validate().unwrap();
    }

    #[test]
    fn lr_schedule() {
        let c = ExperimentConfig::default();
        for e in 0..100 {
            let want = if e < 60 {
                1e-4
            } else if e < 80 {
                1e-5
            } else {
                1e-6
            };
            assert!((c.learning_rate(e) - want).abs() < 1e-18, "epoch {e}");
        }
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut c = ExperimentConfig {
            seed: 9,
            shot_count: 1,
            ..Default::default()
        };
        c.ablation.enable("tran_rd").unwrap();
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
        assert_ne!(c.hash(), ExperimentConfig::default().hash());
        let partial =
            ExperimentConfig::from_toml("epochs = 3\n[ablation]\ndisable_cdia = true\n").unwrap();
        assert_eq!(partial.epochs, 3);
        assert!(partial.ablation.disable_cdia);
        assert!(ExperimentConfig::from_toml("epoch = 3").is_err());
    }

    #[test]
    fn ablation_names() {
        let a = Ablation::parse_list("sdfm,cdia").unwrap();
        assert!(a.disable_sdfm && a.disable_cdia && !a.disable_rd);
        assert_eq!(
            Ablation::parse_list("tran_rd").unwrap().switches(),
            Switches::mean_pool()
        );
        assert!(Ablation::parse_list("bogus").is_err());
        assert_eq!(Ablation::default().label(), "full");
        assert_eq!(a.label(), "no_sdfm+cdia");
        let c = ExperimentConfig {
            ablation: Ablation::parse_list("all").unwrap(),
            ..Default::default()
        };
        let w = c.effective_weights();
        assert_eq!((w.w_cdia, w.w_ce_synth, w.w_aux), (0.0, 0.0, 0.0));
        assert_eq!((w.w_ce_source, w.w_ce_target), (1.0, 1.0));
        let so = ExperimentConfig {
            ablation: Ablation::parse_list("source_only").unwrap(),
            ..Default::default()
        };
        assert_eq!(so.effective_weights().w_ce_target, 0.0);
    }
}
