//! Paired source/target datasets with a controllable domain shift.
//!
//! Each class `c` has a generative mean per snippet,
//! `mu[c][t] = CLASS_RADIUS * u_c + SNIPPET_SPREAD * w[c][t]`, with `u_c` a
//! random unit direction and `w` standard normal. Target means are
//! `R (mu[c][t] + b_c)` where `R` is a random rotation whose angles scale with
//! `rotation_strength` and `b_c` has norm `bias_strength`. Samples add
//! isotropic Gaussian noise in both domains.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Domain, FeatureDataset, FeatureMatrix, SnippetSequence};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Matrix;

pub const CLASS_RADIUS: f64 = 5.0;
pub const SNIPPET_SPREAD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftSpec {
    pub rotation_strength: f64,
    pub bias_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DomainShiftSpec {
    fn default() -> Self {
        Self {
            rotation_strength: 0.35,
            bias_strength: 2.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl DomainShiftSpec {
    pub fn identity(seed: u64) -> Self {
        Self {
            rotation_strength: 0.0,
            bias_strength: 0.0,
            noise_std: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rotation_strength", self.rotation_strength),
            ("bias_strength", self.bias_strength),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Product of Givens rotations over every coordinate pair, in lexicographic
/// pair order, with angle `strength * g_ij` and `g_ij ~ N(0, 1)` fixed by
/// `seed`. Scaling `strength` scales every angle by the same factor.
pub fn rotation_matrix(d: usize, strength: f64, seed: u64) -> Result<Matrix> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "rotation needs d >= 2, got {d}"
        )));
    }
    let mut rng = rng_for(seed, &[0x2071]);
    let mut r = Matrix::zeros(d, d);
    for i in 0..d {
        r.data[i * d + i] = 1.0;
    }
    for i in 0..d {
        for j in i + 1..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            let (s, c) = (strength * g).sin_cos();
            // left-multiply by the rotation in the (i, j) plane
            for k in 0..d {
                let (a, b) = (r.data[i * d + k], r.data[j * d + k]);
                r.data[i * d + k] = c * a - s * b;
                r.data[j * d + k] = s * a + c * b;
            }
        }
    }
    Ok(r)
}

/// Generative means `(source, target)`, each indexed `[class]` as a
/// `(T, d)` matrix.
pub fn generative_means(
    class_count: usize,
    snippet_count: usize,
    dim: usize,
    shift: &DomainShiftSpec,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    shift.validate()?;
    let rot = rotation_matrix(dim, shift.rotation_strength, shift.seed)?;
    let mut rng = rng_for(shift.seed, &[0x3e4a]);
    let mut source = Vec::with_capacity(class_count);
    let mut target = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let center = random_unit(dim, &mut rng);
        let bias: Vec<f64> = random_unit(dim, &mut rng)
            .into_iter()
            .map(|x| x * shift.bias_strength)
            .collect();
        let mut src = Matrix::zeros(snippet_count, dim);
        let mut tgt = Matrix::zeros(snippet_count, dim);
        for t in 0..snippet_count {
            let row = src.row_mut(t);
            for (k, v) in row.iter_mut().enumerate() {
                let w: f64 = StandardNormal.sample(&mut rng);
                *v = CLASS_RADIUS * center[k] + SNIPPET_SPREAD * w;
            }
            let moved: Vec<f64> = row.iter().zip(&bias).map(|(a, b)| a + b).collect();
            for (k, o) in tgt.row_mut(t).iter_mut().enumerate() {
                *o = crate::tensor::dot(rot.row(k), &moved);
            }
        }
        source.push(src);
        target.push(tgt);
    }
    Ok((source, target))
}

fn draw(
    prefix: &str,
    domain: Domain,
    means: &[Matrix],
    per_class: usize,
    noise_std: f64,
    rng: &mut crate::rng::Rng,
) -> Result<Vec<SnippetSequence>> {
    let mut out = Vec::with_capacity(means.len() * per_class);
    for (c, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            let data = mean
                .data
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    (m + noise_std * z) as f32
                })
                .collect();
            out.push(SnippetSequence::new(
                format!("{prefix}_c{c:03}_{i:05}"),
                c,
                domain,
                FeatureMatrix::new(mean.rows, mean.cols, data)?,
            )?);
        }
    }
    Ok(out)
}

/// Returns `(source, target_train_pool, target_test)`. Of the `n_t` target
/// sequences per class, the first `ceil(n_t / 2)` form the training pool
/// and the rest the test set.
pub fn generate_pair(
    class_count: usize,
    per_class_source: usize,
    per_class_target: usize,
    snippet_count: usize,
    dim: usize,
    shift: &DomainShiftSpec,
) -> Result<(FeatureDataset, FeatureDataset, FeatureDataset)> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "dim must be >= 2 for the rotation, got {dim}"
        )));
    }
    if class_count < 2 || per_class_source < 2 || per_class_target < 2 {
        return Err(Error::InvalidArgument(
            "need class_count >= 2, per_class_source >= 2, per_class_target >= 2".into(),
        ));
    }
    if snippet_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "snippet_count must be >= 2, got {snippet_count}"
        )));
    }
    let (src_means, tgt_means) = generative_means(class_count, snippet_count, dim, shift)?;
    let mut rng = rng_for(shift.seed, &[0x5a3f]);
    let source = draw(
        "source",
        Domain::Source,
        &src_means,
        per_class_source,
        shift.noise_std,
        &mut rng,
    )?;
    let target = draw(
        "target",
        Domain::Target,
        &tgt_means,
        per_class_target,
        shift.noise_std,
        &mut rng,
    )?;
    let pool_size = per_class_target.div_ceil(2);
    let (pool, test): (Vec<_>, Vec<_>) = target
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % per_class_target < pool_size);
    let strip =
        |v: Vec<(usize, SnippetSequence)>| v.into_iter().map(|(_, s)| s).collect::<Vec<_>>();
    let make = |seqs| FeatureDataset::new(seqs, class_count, snippet_count, dim);
    Ok((make(source)?, make(strip(pool))?, make(strip(test))?))
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{accuracy, predict_nearest_center, Metric, PooledSet};

    #[test]
    fn rotation_is_orthogonal() {
        for (d, s) in [(2, 0.3), (5, 1.0), (16, 0.35), (16, 3.0)] {
            let r = rotation_matrix(d, s, 7).unwrap();
            for i in 0..d {
                for j in 0..d {
                    let g: f64 = (0..d).map(|k| r.get(k, i) * r.get(k, j)).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-6, "d={d} ({i},{j}) {g}");
                }
            }
        }
        assert!(rotation_matrix(1, 0.5, 0).is_err());
    }

    #[test]
    fn identity_shift_keeps_means() {
        let (s, t) = generative_means(3, 4, 6, &DomainShiftSpec::identity(3)).unwrap();
        assert_eq!(s, t);
        let (src, pool, test) =
            generate_pair(3, 4, 4, 4, 6, &DomainShiftSpec::identity(3)).unwrap();
        // zero noise: every target sample equals its class's source sample
        for seq in pool.sequences().iter().chain(test.sequences()) {
            let reference = src
                .sequences()
                .iter()
                .find(|x| x.label == seq.label)
                .unwrap();
            assert_eq!(seq.features, reference.features);
        }
    }

    #[test]
    fn shapes() {
        let (src, pool, test) =
            generate_pair(5, 100, 40, 5, 16, &DomainShiftSpec::default()).unwrap();
        assert_eq!((src.len(), src.snippet_count(), src.dim()), (500, 5, 16));
        assert_eq!(pool.len() + test.len(), 200);
        assert_eq!((pool.len(), test.len()), (100, 100));
        assert!(pool.sequences().iter().all(|s| s.domain == Domain::Target));
        let (_, pool, test) = generate_pair(2, 2, 5, 2, 2, &DomainShiftSpec::default()).unwrap();
        assert_eq!((pool.len(), test.len()), (6, 4));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_pair(5, 10, 10, 5, 1, &DomainShiftSpec::default()).is_err());
        assert!(generate_pair(1, 10, 10, 5, 4, &DomainShiftSpec::default()).is_err());
        let bad = DomainShiftSpec {
            noise_std: -1.0,
            ..Default::default()
        };
        assert!(generate_pair(2, 10, 10, 5, 4, &bad).is_err());
    }

    #[test]
    fn deterministic() {
        let shift = DomainShiftSpec {
            seed: 11,
            ..Default::default()
        };
        let a = generate_pair(3, 5, 6, 4, 8, &shift).unwrap();
        let b = generate_pair(3, 5, 6, 4, 8, &shift).unwrap();
        assert_eq!(a, b);
        let c = generate_pair(3, 5, 6, 4, 8, &DomainShiftSpec { seed: 12, ..shift }).unwrap();
        assert_ne!(a.0, c.0);
    }

    fn nc_target_accuracy(rotation: f64, seed: u64) -> f64 {
        let shift = DomainShiftSpec {
            rotation_strength: rotation,
            bias_strength: 0.0,
            noise_std: 1.0,
            seed,
        };
        let (src, _, test) = generate_pair(5, 40, 80, 5, 16, &shift).unwrap();
        let src = PooledSet::from_dataset(&src);
        let test = PooledSet::from_dataset(&test);
        accuracy(
            &predict_nearest_center(&src, &test.features, Metric::Euclidean).unwrap(),
            &test.labels,
        )
    }

    #[test]
    fn zero_shift_is_separable() {
        for seed in 0..3 {
            assert!(nc_target_accuracy(0.0, seed) >= 99.0);
        }
    }

    #[test]
    fn rotation_does_not_help_on_average() {
        let mean = |r: f64| (0..5).map(|s| nc_target_accuracy(r, s)).sum::<f64>() / 5.0;
        let curve: Vec<f64> = [0.0, 0.2, 0.4, 0.8].iter().map(|&r| mean(r)).collect();
        assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{curve:?}");
    }
}
