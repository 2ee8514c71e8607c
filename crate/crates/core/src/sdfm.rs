//! Statistics-based feature mixture.
//!
//! Source statistics are collected per class and per snippet. For a labeled
//! target anchor, each snippet is paired with its `K` nearest source class
//! centers; the anchor and those centers are averaged into a new mean, the
//! centers' spreads are averaged (plus a floor `alpha`) into a new standard
//! deviation, and fresh target-domain sequences are drawn from the resulting
//! diagonal Gaussian. Synthesized sequences keep the anchor's label.

use rand_distr::{Distribution, StandardNormal};

use crate::data::{Domain, FeatureDataset, FeatureMatrix, SnippetSequence};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Matrix;

/// Per-class, per-snippet mean and sample standard deviation of source
/// features, stored as `(C, T, d)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSnippetStatistics {
    pub class_count: usize,
    pub snippet_count: usize,
    pub dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ClassSnippetStatistics {
    fn offset(&self, class: usize, snippet: usize) -> usize {
        (class * self.snippet_count + snippet) * self.dim
    }

    pub fn mean(&self, class: usize, snippet: usize) -> &[f64] {
        let o = self.offset(class, snippet);
        &self.mean[o..o + self.dim]
    }

    pub fn std(&self, class: usize, snippet: usize) -> &[f64] {
        let o = self.offset(class, snippet);
        &self.std[o..o + self.dim]
    }

    /// Classes whose sample count is too small for a sample deviation.
    pub fn flagged_classes(&self) -> Vec<usize> {
        (0..self.class_count)
            .filter(|&c| self.counts[c] < 2)
            .collect()
    }

    /// Two sequences per class (`mean_cXX`, `std_cXX`) in the dataset
    /// container layout, for inspection.
    pub fn to_dataset(&self) -> Result<FeatureDataset> {
        let mut seqs = Vec::with_capacity(2 * self.class_count);
        for c in 0..self.class_count {
            for (kind, source) in [("mean", &self.mean), ("std", &self.std)] {
                let o = self.offset(c, 0);
                let len = self.snippet_count * self.dim;
                let data = source[o..o + len].iter().map(|&v| v as f32).collect();
                let m = FeatureMatrix::new(self.snippet_count, self.dim, data)?;
                seqs.push(SnippetSequence::new(
                    format!("{kind}_c{c:03}"),
                    c,
                    Domain::Source,
                    m,
                )?);
            }
        }
        FeatureDataset::new(seqs, self.class_count, self.snippet_count, self.dim)
    }
}

/// Class statistics over the source-domain sequences of `source`.
///
/// Fails on the first class with fewer than two source sequences.
pub fn compute_source_statistics(source: &FeatureDataset) -> Result<ClassSnippetStatistics> {
    let (c_n, t_n, d) = (source.class_count(), source.snippet_count(), source.dim());
    let len = t_n * d;
    let mut counts = vec![0usize; c_n];
    let mut sum = vec![0.0f64; c_n * len];
    let members: Vec<&SnippetSequence> = source
        .sequences()
        .iter()
        .filter(|s| s.domain == Domain::Source)
        .collect();
    for s in &members {
        counts[s.label] += 1;
        let acc = &mut sum[s.label * len..(s.label + 1) * len];
        for (a, &v) in acc.iter_mut().zip(s.features.as_slice()) {
            *a += f64::from(v);
        }
    }
    if let Some(class) = (0..c_n).find(|&c| counts[c] < 2) {
        return Err(Error::UndersizedClass {
            class,
            count: counts[class],
        });
    }
    let mut mean = sum;
    for c in 0..c_n {
        let n = counts[c] as f64;
        mean[c * len..(c + 1) * len]
            .iter_mut()
            .for_each(|v| *v /= n);
    }
    let mut sq = vec![0.0f64; c_n * len];
    for s in &members {
        let mu = &mean[s.label * len..(s.label + 1) * len];
        let acc = &mut sq[s.label * len..(s.label + 1) * len];
        for ((a, &v), m) in acc.iter_mut().zip(s.features.as_slice()).zip(mu) {
            let dv = f64::from(v) - m;
            *a += dv * dv;
        }
    }
    for c in 0..c_n {
        let denom = (counts[c] - 1) as f64;
        sq[c * len..(c + 1) * len]
            .iter_mut()
            .for_each(|v| *v = (*v / denom).sqrt());
    }
    Ok(ClassSnippetStatistics {
        class_count: c_n,
        snippet_count: t_n,
        dim: d,
        mean,
        std: sq,
        counts,
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Selection score of a class center: `exp(1 - distance)`.
pub fn center_score(distance: f64) -> f64 {
    (1.0 - distance).exp()
}

/// The `k` classes whose snippet-`t` centers score highest for `anchor`,
/// ties going to the lower class index.
///
/// The score is strictly decreasing in distance, so ranking is done on the
/// distance itself (the exponential underflows for far-away centers).
pub fn select_topk_centers(
    anchor: &[f64],
    stats: &ClassSnippetStatistics,
    snippet: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 || k > stats.class_count {
        return Err(Error::InvalidArgument(format!(
            "K = {k} outside [1, {}]",
            stats.class_count
        )));
    }
    if snippet >= stats.snippet_count || anchor.len() != stats.dim {
        return Err(Error::Shape(format!(
            "snippet {snippet} / dim {} do not fit statistics of {}x{}",
            anchor.len(),
            stats.snippet_count,
            stats.dim
        )));
    }
    let mut ranked: Vec<(f64, usize)> = (0..stats.class_count)
        .map(|c| (euclidean(stats.mean(c, snippet), anchor), c))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, c)| c).collect())
}

/// Gaussian fitted around one target anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedDistribution {
    pub anchor_id: String,
    pub label: usize,
    /// `(T, d)`
    pub mean: Matrix,
    /// `(T, d)`, every entry `>= alpha`
    pub std: Matrix,
    /// Selected classes for each snippet.
    pub selected_classes: Vec<Vec<usize>>,
}

pub fn synthesize_distribution(
    anchor: &SnippetSequence,
    stats: &ClassSnippetStatistics,
    k: usize,
    alpha: f64,
) -> Result<SynthesizedDistribution> {
    if anchor.domain != Domain::Target {
        return Err(Error::InvalidArgument(format!(
            "anchor '{}' is a {} sequence; anchors must come from the target domain",
            anchor.sample_id, anchor.domain
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if anchor.snippet_count() != stats.snippet_count || anchor.dim() != stats.dim {
        return Err(Error::Shape(
            "anchor shape differs from source statistics".into(),
        ));
    }
    let (t_n, d) = (stats.snippet_count, stats.dim);
    let mut mean = Matrix::zeros(t_n, d);
    let mut std = Matrix::zeros(t_n, d);
    let mut selected_classes = Vec::with_capacity(t_n);
    let mut row = vec![0.0; d];
    for t in 0..t_n {
        for (r, &v) in row.iter_mut().zip(anchor.features.row(t)) {
            *r = f64::from(v);
        }
        let picked = select_topk_centers(&row, stats, t, k)?;
        let m = mean.row_mut(t);
        m.copy_from_slice(&row);
        for &c in &picked {
            crate::tensor::axpy(1.0, stats.mean(c, t), m);
        }
        m.iter_mut().for_each(|v| *v /= (k + 1) as f64);
        let s = std.row_mut(t);
        for &c in &picked {
            crate::tensor::axpy(1.0, stats.std(c, t), s);
        }
        s.iter_mut().for_each(|v| *v = *v / k as f64 + alpha);
        selected_classes.push(picked);
    }
    Ok(SynthesizedDistribution {
        anchor_id: anchor.sample_id.clone(),
        label: anchor.label,
        mean,
        std,
        selected_classes,
    })
}

/// Draws `count` sequences, every entry independently from
/// `N(mean, std^2)`.
pub fn sample_features(
    dist: &SynthesizedDistribution,
    count: usize,
    seed: u64,
) -> Result<Vec<SnippetSequence>> {
    let mut rng = rng_for(seed, &[0x5d0f]);
    let (t_n, d) = (dist.mean.rows, dist.mean.cols);
    (0..count)
        .map(|i| {
            let data = dist
                .mean
                .data
                .iter()
                .zip(&dist.std.data)
                .map(|(&m, &s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (m + s * z) as f32
                })
                .collect();
            SnippetSequence::new(
                format!("{}~syn{i:05}", dist.anchor_id),
                dist.label,
                Domain::Synthesized,
                FeatureMatrix::new(t_n, d, data)?,
            )
        })
        .collect()
}

/// How many sequences each of `anchors` anchors contributes to a class
/// total: an even split with the remainder going to the earliest anchors.
pub fn anchor_quota(total: usize, anchors: usize) -> Vec<usize> {
    let (base, extra) = (total / anchors, total % anchors);
    (0..anchors)
        .map(|i| base + usize::from(i < extra))
        .collect()
}

/// Builds the synthesized training set: `per_class_total` sequences per
/// class, spread over that class's few-shot anchors.
pub fn build_synthesized_set(
    target_fewshot: &FeatureDataset,
    stats: &ClassSnippetStatistics,
    k: usize,
    alpha: f64,
    per_class_total: usize,
    seed: u64,
) -> Result<FeatureDataset> {
    if per_class_total == 0 {
        return Err(Error::InvalidArgument(
            "per_class_total must be >= 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(per_class_total * target_fewshot.class_count());
    for (class, anchors) in target_fewshot.indices_by_class().into_iter().enumerate() {
        if anchors.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let quota = anchor_quota(per_class_total, anchors.len());
        for (&idx, &n) in anchors.iter().zip(&quota) {
            if n == 0 {
                continue;
            }
            let anchor = &target_fewshot.sequences()[idx];
            let dist = synthesize_distribution(anchor, stats, k, alpha)?;
            out.extend(sample_features(
                &dist,
                n,
                crate::rng::derive_seed(seed, &[idx as u64]),
            )?);
        }
    }
    FeatureDataset::new(
        out,
        target_fewshot.class_count(),
        target_fewshot.snippet_count(),
        target_fewshot.dim(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, label: usize, domain: Domain, rows: &[Vec<f32>]) -> SnippetSequence {
        SnippetSequence::new(id, label, domain, FeatureMatrix::from_rows(rows).unwrap()).unwrap()
    }

    /// Statistics with the given per-class mean/std repeated on every snippet.
    fn explicit(means: &[Vec<f64>], stds: &[Vec<f64>], snippets: usize) -> ClassSnippetStatistics {
        let dim = means[0].len();
        let rep = |v: &[Vec<f64>]| -> Vec<f64> {
            v.iter()
                .flat_map(|row| std::iter::repeat_n(row.clone(), snippets).flatten())
                .collect()
        };
        ClassSnippetStatistics {
            class_count: means.len(),
            snippet_count: snippets,
            dim,
            mean: rep(means),
            std: rep(stds),
            counts: vec![2; means.len()],
        }
    }

    #[test]
    fn two_sample_statistics() {
        let ds = FeatureDataset::new(
            vec![
                seq("a", 0, Domain::Source, &[vec![1.0, 3.0], vec![0.0, 0.0]]),
                seq("b", 0, Domain::Source, &[vec![3.0, 5.0], vec![0.0, 0.0]]),
            ],
            1,
            2,
            2,
        )
        .unwrap();
        let st = compute_source_statistics(&ds).unwrap();
        assert_eq!(st.mean(0, 0), &[2.0, 4.0]);
        assert_eq!(st.std(0, 0), &[2f64.sqrt(), 2f64.sqrt()]);
        assert_eq!(st.std(0, 1), &[0.0, 0.0]);
    }

    #[test]
    fn three_value_sample_std() {
        let ds = FeatureDataset::new(
            (0..3)
                .map(|i| {
                    seq(
                        &format!("s{i}"),
                        0,
                        Domain::Source,
                        &[vec![2.0 * i as f32], vec![0.0]],
                    )
                })
                .collect(),
            1,
            2,
            1,
        )
        .unwrap();
        let st = compute_source_statistics(&ds).unwrap();
        assert_eq!(st.mean(0, 0), &[2.0]);
        assert_eq!(st.std(0, 0), &[2.0]);
    }

    #[test]
    fn undersized_class_is_named() {
        let ds = FeatureDataset::new(
            vec![
                seq("a", 0, Domain::Source, &[vec![1.0], vec![1.0]]),
                seq("b", 0, Domain::Source, &[vec![1.0], vec![1.0]]),
                seq("c", 1, Domain::Source, &[vec![1.0], vec![1.0]]),
            ],
            2,
            2,
            1,
        )
        .unwrap();
        let err = compute_source_statistics(&ds).unwrap_err();
        assert!(matches!(err, Error::UndersizedClass { class: 1, count: 1 }));
    }

    #[test]
    fn topk_picks_nearest() {
        // centers at distance 0.5, 2.0, 1.0 from the origin
        let st = explicit(
            &[vec![0.5, 0.0], vec![0.0, 2.0], vec![-1.0, 0.0]],
            &vec![vec![1.0, 1.0]; 3],
            1,
        );
        assert_eq!(
            select_topk_centers(&[0.0, 0.0], &st, 0, 2).unwrap(),
            vec![0, 2]
        );
        assert_eq!(
            select_topk_centers(&[0.0, 2.0], &st, 0, 1).unwrap(),
            vec![1]
        );
        assert!(select_topk_centers(&[0.0, 0.0], &st, 0, 4).is_err());
        assert!(center_score(0.5) > center_score(1.0));
    }

    #[test]
    fn topk_ties_go_to_lower_index() {
        let st = explicit(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            &vec![vec![0.0, 0.0]; 3],
            1,
        );
        assert_eq!(
            select_topk_centers(&[0.0, 0.0], &st, 0, 2).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn synthesized_mean_and_std() {
        // a third, far-away class keeps K=2 selecting the first two
        let st = explicit(
            &[vec![2.0, 4.0], vec![4.0, 2.0], vec![100.0, 100.0]],
            &[vec![1.0, 1.0], vec![3.0, 3.0], vec![9.0, 9.0]],
            2,
        );
        let anchor = seq("t", 0, Domain::Target, &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let dist = synthesize_distribution(&anchor, &st, 2, 0.21).unwrap();
        assert_eq!(dist.mean.row(0), &[2.0, 2.0]);
        assert_eq!(dist.std.row(1), &[2.21, 2.21]);
        assert_eq!(dist.selected_classes[0], vec![0, 1]);
    }

    #[test]
    fn single_center_fixed_point_and_alpha_floor() {
        let st = explicit(
            &[vec![1.5, -2.0], vec![50.0, 50.0]],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            2,
        );
        let anchor = seq("t", 1, Domain::Target, &[vec![1.5, -2.0], vec![1.5, -2.0]]);
        let dist = synthesize_distribution(&anchor, &st, 1, 0.21).unwrap();
        assert_eq!(dist.mean.row(1), &[1.5, -2.0]);
        assert!(dist.std.data.iter().all(|&s| s == 0.21));
    }

    #[test]
    fn anchor_must_be_target_and_alpha_positive() {
        let st = explicit(&[vec![0.0], vec![1.0]], &[vec![1.0], vec![1.0]], 2);
        let src = seq("s", 0, Domain::Source, &[vec![0.0], vec![0.0]]);
        assert!(synthesize_distribution(&src, &st, 1, 0.2).is_err());
        let tgt = seq("t", 0, Domain::Target, &[vec![0.0], vec![0.0]]);
        assert!(synthesize_distribution(&tgt, &st, 1, 0.0).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_labeled() {
        let st = explicit(
            &[vec![0.0, 0.0], vec![3.0, 3.0]],
            &vec![vec![1.0, 1.0]; 2],
            2,
        );
        let anchor = seq("t", 1, Domain::Target, &[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let dist = synthesize_distribution(&anchor, &st, 1, 0.1).unwrap();
        let a = sample_features(&dist, 3, 7).unwrap();
        assert_eq!(a, sample_features(&dist, 3, 7).unwrap());
        assert!(a
            .iter()
            .all(|s| s.label == 1 && s.domain == Domain::Synthesized));
    }

    #[test]
    fn tiny_alpha_concentrates() {
        let st = explicit(&[vec![0.0; 3], vec![1.0; 3]], &vec![vec![0.0; 3]; 2], 2);
        let anchor = seq("t", 0, Domain::Target, &[vec![0.5; 3], vec![0.25; 3]]);
        let alpha = 1e-4;
        let dist = synthesize_distribution(&anchor, &st, 1, alpha).unwrap();
        let s = &sample_features(&dist, 1, 0).unwrap()[0];
        for (v, m) in s.features.as_slice().iter().zip(&dist.mean.data) {
            assert!((f64::from(*v) - m).abs() < 6.0 * alpha);
        }
    }

    #[test]
    fn quotas() {
        assert_eq!(anchor_quota(200, 5), vec![40; 5]);
        assert_eq!(anchor_quota(200, 3), vec![67, 67, 66]);
        assert_eq!(anchor_quota(1, 1), vec![1]);
    }

    #[test]
    fn synthesized_set_counts_and_missing_class() {
        let mut seqs = Vec::new();
        for c in 0..2 {
            for i in 0..3 {
                seqs.push(seq(
                    &format!("t{c}{i}"),
                    c,
                    Domain::Target,
                    &[vec![c as f32], vec![0.0]],
                ));
            }
        }
        let few = FeatureDataset::new(seqs, 2, 2, 1).unwrap();
        let st = explicit(&[vec![0.0], vec![1.0]], &[vec![1.0], vec![1.0]], 2);
        let set = build_synthesized_set(&few, &st, 1, 0.21, 200, 4).unwrap();
        assert_eq!(set.len(), 400);
        let from_first = set
            .sequences()
            .iter()
            .filter(|s| s.sample_id.starts_with("t00~"))
            .count();
        assert_eq!(from_first, 67);
        assert!(set
            .sequences()
            .iter()
            .all(|s| s.sample_id[1..2].parse::<usize>().unwrap() == s.label));

        let only_zero = few.subset(["t00"]).unwrap();
        assert!(matches!(
            build_synthesized_set(&only_zero, &st, 1, 0.21, 10, 0),
            Err(Error::MissingClass(1))
        ));
    }
}
