use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Matrix;

/// How per-head attention outputs are merged into one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadCombine {
    /// Every head works at full width and the outputs are summed.
    #[default]
    Sum,
    /// Heads of width `dim / heads` are concatenated and projected back.
    ConcatProject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub classes: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Relation dropout ratio.
    pub beta: f64,
    pub combine: HeadCombine,
    /// Tuples sampled per scale (capped by the number that exist).
    pub tuples_per_scale: usize,
}

impl ModelConfig {
    pub fn new(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            heads: 8,
            ffn_dim: 2 * dim,
            beta: 0.5,
            combine: HeadCombine::Sum,
            tuples_per_scale: 3,
        }
    }

    pub fn head_dim(&self) -> usize {
        match self.combine {
            HeadCombine::Sum => self.dim,
            HeadCombine::ConcatProject => self.dim / self.heads,
        }
    }

    /// The attention scale factor `d_k = dim / heads`.
    pub fn key_scale(&self) -> f64 {
        self.dim as f64 / self.heads as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(
                "dim, classes, heads and ffn_dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1)", self.beta)));
        }
        if self.combine == HeadCombine::ConcatProject && !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "concat heads need dim {} divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.tuples_per_scale == 0 {
            return Err(Error::Config("tuples_per_scale must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weights of one attention block (shared layout for the relation block and
/// the scale block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `(dim, heads * head_dim)`, head `h` in columns `h*hd..(h+1)*hd`.
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    /// Per-head output normalization, `(heads, head_dim)`.
    pub head_gain: Matrix,
    pub head_bias: Matrix,
    /// `(heads * head_dim, dim)`; empty unless heads are concatenated.
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl rand::Rng) -> Matrix {
    let normal = Normal::new(0.0, std).expect("positive std");
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| normal.sample(rng)).collect(),
    )
}

impl AttentionParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        let (d, h, hd, f) = (cfg.dim, cfg.heads, cfg.head_dim(), cfg.ffn_dim);
        let std_d = 1.0 / (d as f64).sqrt();
        let wq = gaussian(d, h * hd, std_d, rng);
        let wk = gaussian(d, h * hd, std_d, rng);
        let wv = gaussian(d, h * hd, std_d, rng);
        let wo = match cfg.combine {
            HeadCombine::Sum => Matrix::zeros(0, 0),
            HeadCombine::ConcatProject => gaussian(h * hd, d, 1.0 / ((h * hd) as f64).sqrt(), rng),
        };
        let w1 = gaussian(d, f, std_d, rng);
        let w2 = gaussian(f, d, 1.0 / (f as f64).sqrt(), rng);
        Self {
            wq,
            wk,
            wv,
            head_gain: Matrix::filled(h, hd, 1.0),
            head_bias: Matrix::zeros(h, hd),
            wo,
            w1,
            b1: vec![0.0; f],
            w2,
            b2: vec![0.0; d],
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        Self {
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            head_gain: z(&self.head_gain),
            head_bias: z(&self.head_bias),
            wo: z(&self.wo),
            w1: z(&self.w1),
            b1: vec![0.0; self.b1.len()],
            w2: z(&self.w2),
            b2: vec![0.0; self.b2.len()],
            gain: vec![0.0; self.gain.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn tensors(&self) -> [(&'static str, &[f64]); 12] {
        [
            ("wq", &self.wq.data),
            ("wk", &self.wk.data),
            ("wv", &self.wv.data),
            ("head_gain", &self.head_gain.data),
            ("head_bias", &self.head_bias.data),
            ("wo", &self.wo.data),
            ("w1", &self.w1.data),
            ("b1", &self.b1),
            ("w2", &self.w2.data),
            ("b2", &self.b2),
            ("gain", &self.gain),
            ("bias", &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            &mut self.wq.data,
            &mut self.wk.data,
            &mut self.wv.data,
            &mut self.head_gain.data,
            &mut self.head_bias.data,
            &mut self.wo.data,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
            &mut self.gain,
            &mut self.bias,
        ]
    }

    fn shapes(&self) -> [(usize, usize); 12] {
        let s = |m: &Matrix| (m.rows, m.cols);
        let v = |x: &Vec<f64>| (1, x.len());
        [
            s(&self.wq),
            s(&self.wk),
            s(&self.wv),
            s(&self.head_gain),
            s(&self.head_bias),
            s(&self.wo),
            s(&self.w1),
            v(&self.b1),
            s(&self.w2),
            v(&self.b2),
            v(&self.gain),
            v(&self.bias),
        ]
    }
}

/// Every learnable weight of the aggregator plus the classifier head.
///
/// The same type doubles as a gradient accumulator (see [`zeros_like`]).
///
/// [`zeros_like`]: TranRdParameters::zeros_like
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranRdParameters {
    pub config: ModelConfig,
    pub relation: AttentionParams,
    pub scale: AttentionParams,
    /// `(dim, classes)`
    pub classifier_w: Matrix,
    pub classifier_b: Vec<f64>,
}

/// Name, shape, and flat values of one parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub values: &'a [f64],
}

impl TranRdParameters {
    /// Projection weights are drawn from `N(0, 1/fan_in)`, layer-norm gains
    /// start at one, and the classifier starts at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0x1417]);
        let relation = AttentionParams::init(&config, &mut rng);
        let scale = AttentionParams::init(&config, &mut rng);
        Ok(Self {
            classifier_w: Matrix::zeros(config.dim, config.classes),
            classifier_b: vec![0.0; config.classes],
            config,
            relation,
            scale,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            relation: self.relation.zeros_like(),
            scale: self.scale.zeros_like(),
            classifier_w: Matrix::zeros(self.classifier_w.rows, self.classifier_w.cols),
            classifier_b: vec![0.0; self.classifier_b.len()],
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (prefix, block) in [("relation", &self.relation), ("scale", &self.scale)] {
            for ((name, values), shape) in block.tensors().into_iter().zip(block.shapes()) {
                out.push(TensorView {
                    name: format!("{prefix}.{name}"),
                    shape,
                    values,
                });
            }
        }
        out.push(TensorView {
            name: "classifier.w".into(),
            shape: (self.classifier_w.rows, self.classifier_w.cols),
            values: &self.classifier_w.data,
        });
        out.push(TensorView {
            name: "classifier.b".into(),
            shape: (1, self.classifier_b.len()),
            values: &self.classifier_b,
        });
        out
    }

    /// Mutable flat views in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.relation.tensors_mut());
        out.extend(self.scale.tensors_mut());
        out.push(&mut self.classifier_w.data);
        out.push(&mut self.classifier_b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Self, alpha: f64) {
        let src: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.values.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(&src) {
            crate::tensor::axpy(alpha, s, dst);
        }
    }

    /// Flat copy of every value, in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for t in self.tensors_mut() {
            if offset < t.len() {
                t[offset] = value;
                return;
            }
            offset -= t.len();
        }
        panic!("parameter index {index} out of range");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_contract() {
        let p = TranRdParameters::init(ModelConfig::new(16, 5), 3).unwrap();
        assert_eq!(p.config.heads, 8);
        assert!(p.is_finite());
        assert!(p.relation.gain.iter().all(|&g| g == 1.0));
        assert!(p.scale.bias.iter().all(|&b| b == 0.0));
        assert!(p.relation.head_gain.data.iter().all(|&g| g == 1.0));
        assert!(p.classifier_w.data.iter().all(|&w| w == 0.0));
        assert_eq!(p.relation.wq.cols, 8 * 16);
        assert_eq!(
            p,
            TranRdParameters::init(ModelConfig::new(16, 5), 3).unwrap()
        );
    }

    #[test]
    fn flat_indexing_round_trip() {
        let mut p = TranRdParameters::init(ModelConfig::new(4, 2), 0).unwrap();
        let n = p.parameter_count();
        assert_eq!(p.flatten().len(), n);
        p.set_flat(n - 1, 7.0);
        assert_eq!(p.classifier_b[1], 7.0);
    }

    #[test]
    fn concat_requires_divisible_dim() {
        let mut cfg = ModelConfig::new(6, 2);
        cfg.heads = 4;
        cfg.combine = HeadCombine::ConcatProject;
        assert!(TranRdParameters::init(cfg, 0).is_err());
    }
}
