//! Source-only statistical baselines on video-level (snippet-averaged)
//! features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, SnippetSequence};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::sdfm::euclidean;

pub const KNN_KS: [usize; 3] = [3, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cosine similarity`
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Cosine => 1.0 - crate::losses::cosine(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Random,
    Knn,
    NearestCenter,
    NearestNeighbor,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Random => "random",
            BaselineMethod::Knn => "knn",
            BaselineMethod::NearestCenter => "nearest_center",
            BaselineMethod::NearestNeighbor => "nearest_neighbor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub method: BaselineMethod,
    /// `(k, accuracy)` for kNN, empty otherwise.
    pub per_k_accuracy: Vec<(usize, f64)>,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub seed: u64,
}

pub fn pool_video_feature(seq: &SnippetSequence) -> Vec<f64> {
    let f = &seq.features;
    let mut out = vec![0.0; f.cols()];
    for t in 0..f.rows() {
        for (o, &v) in out.iter_mut().zip(f.row(t)) {
            *o += f64::from(v);
        }
    }
    out.iter_mut().for_each(|v| *v /= f.rows() as f64);
    out
}

/// Labeled video-level vectors.
#[derive(Debug, Clone)]
pub struct PooledSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl PooledSet {
    pub fn from_dataset(ds: &FeatureDataset) -> Self {
        Self {
            features: ds.sequences().iter().map(pool_video_feature).collect(),
            labels: ds.labels(),
            class_count: ds.class_count(),
        }
    }
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len() as f64
}

pub fn predict_random(test_count: usize, class_count: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, &[0x4a4d]);
    (0..test_count)
        .map(|_| rng.random_range(0..class_count))
        .collect()
}

fn ensure_source(source: &PooledSet) -> Result<()> {
    if source.features.is_empty() {
        return Err(Error::InvalidArgument("source set is empty".into()));
    }
    Ok(())
}

/// Source indices ordered by distance to `query` (ties by index).
fn ranked(source: &PooledSet, query: &[f64], metric: Metric) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = source
        .features
        .iter()
        .enumerate()
        .map(|(i, s)| (metric.distance(s, query), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, i)| i).collect()
}

/// Majority label among the `k` nearest source vectors; vote ties go to
/// the smaller label.
pub fn predict_knn(
    source: &PooledSet,
    test: &[Vec<f64>],
    k: usize,
    metric: Metric,
) -> Result<Vec<usize>> {
    ensure_source(source)?;
    if k == 0 || k > source.features.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} but the source set has {} samples",
            source.features.len()
        )));
    }
    Ok(test
        .iter()
        .map(|q| {
            let mut votes = vec![0usize; source.class_count];
            for &i in ranked(source, q, metric).iter().take(k) {
                votes[source.labels[i]] += 1;
            }
            // max_by_key keeps the last maximum, so scan in reverse
            (0..votes.len())
                .rev()
                .max_by_key(|&c| votes[c])
                .unwrap_or(0)
        })
        .collect())
}

pub fn class_centers(source: &PooledSet) -> Vec<Option<Vec<f64>>> {
    let d = source.features.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; source.class_count];
    let mut counts = vec![0usize; source.class_count];
    for (f, &l) in source.features.iter().zip(&source.labels) {
        counts[l] += 1;
        crate::tensor::axpy(1.0, f, &mut sums[l]);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(mut s, n)| {
            (n > 0).then(|| {
                s.iter_mut().for_each(|v| *v /= n as f64);
                s
            })
        })
        .collect()
}

pub fn predict_nearest_center(
    source: &PooledSet,
    test: &[Vec<f64>],
    metric: Metric,
) -> Result<Vec<usize>> {
    ensure_source(source)?;
    let centers = class_centers(source);
    Ok(test
        .iter()
        .map(|q| {
            centers
                .iter()
                .enumerate()
                .filter_map(|(c, m)| m.as_ref().map(|m| (metric.distance(m, q), c)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, c)| c)
                .unwrap_or(0)
        })
        .collect())
}

pub fn predict_nearest_neighbor(
    source: &PooledSet,
    test: &[Vec<f64>],
    metric: Metric,
) -> Result<Vec<usize>> {
    ensure_source(source)?;
    Ok(test
        .iter()
        .map(|q| source.labels[ranked(source, q, metric)[0]])
        .collect())
}

/// All four baselines. kNN reports each `k` in [`KNN_KS`] that the source
/// set can support plus their mean.
pub fn run_baselines(
    source: &FeatureDataset,
    test: &FeatureDataset,
    seed: u64,
    metric: Metric,
) -> Result<Vec<BaselineReport>> {
    source.ensure_compatible(test)?;
    if test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let src = PooledSet::from_dataset(source);
    let tst = PooledSet::from_dataset(test);
    let labels = &tst.labels;
    let random = predict_random(labels.len(), src.class_count, seed);
    let mut per_k = Vec::new();
    for k in KNN_KS.into_iter().filter(|&k| k <= src.features.len()) {
        per_k.push((
            k,
            accuracy(&predict_knn(&src, &tst.features, k, metric)?, labels),
        ));
    }
    let knn_mean = if per_k.is_empty() {
        0.0
    } else {
        per_k.iter().map(|(_, a)| a).sum::<f64>() / per_k.len() as f64
    };
    let report = |method, accuracy, per_k_accuracy| BaselineReport {
        method,
        per_k_accuracy,
        accuracy,
        seed,
    };
    Ok(vec![
        report(
            BaselineMethod::Random,
            accuracy(&random, labels),
            Vec::new(),
        ),
        report(BaselineMethod::Knn, knn_mean, per_k),
        report(
            BaselineMethod::NearestCenter,
            accuracy(
                &predict_nearest_center(&src, &tst.features, metric)?,
                labels,
            ),
            Vec::new(),
        ),
        report(
            BaselineMethod::NearestNeighbor,
            accuracy(
                &predict_nearest_neighbor(&src, &tst.features, metric)?,
                labels,
            ),
            Vec::new(),
        ),
    ])
}
