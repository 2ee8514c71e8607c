//! Training objectives.
//!
//! Both contrastive terms share one form: for an anchor `a` with positive
//! `p` and negatives `n_1..n_m`,
//!
//! ```text
//! l(a) = -log( exp(cos(a, p)) / sum_j exp(cos(a, n_j)) )
//! ```
//!
//! The positive is not part of the denominator, so the loss can go negative.
//! The gradient variants below return derivatives with respect to every
//! embedding that took part; constants (prototypes) get none.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, log_sum_exp, softmax_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_cdia: f64,
    pub w_ce_source: f64,
    pub w_ce_target: f64,
    pub w_ce_synth: f64,
    pub w_aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_cdia: 1e-4,
            w_ce_source: 1.0,
            w_ce_target: 1.0,
            w_ce_synth: 1e-2,
            w_aux: 1e-4,
        }
    }
}

/// Unweighted value of every loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub cdia: f64,
    pub ce_source: f64,
    pub ce_target: f64,
    pub ce_synth: f64,
    pub aux: f64,
}

impl LossComponents {
    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("L_CDIA", self.cdia),
            ("L_CES", self.ce_source),
            ("L_CET", self.ce_target),
            ("L_CEA", self.ce_synth),
            ("L_aux", self.aux),
        ]
    }
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    if let Some((name, _)) = c.named().iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss term {name}")));
    }
    Ok(w.w_cdia * c.cdia
        + w.w_ce_source * c.ce_source
        + w.w_ce_target * c.ce_target
        + w.w_ce_synth * c.ce_synth
        + w.w_aux * c.aux)
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Accumulates `scale * d cos(a, b) / d a` into `out`.
fn cosine_grad(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let c = dot(a, b) / (na * nb);
    axpy(scale / (na * nb), b, out);
    axpy(-scale * c / (na * na), a, out);
}

/// Where an anchor's positive comes from.
#[derive(Debug, Clone, Copy)]
pub enum Positive<'a> {
    /// Another row of the embedding table (receives gradient).
    Row(usize),
    /// A constant vector such as a class prototype.
    Fixed(&'a [f64]),
}

/// One anchor of a contrastive term, expressed as indices into an
/// embedding table.
#[derive(Debug, Clone)]
pub struct ContrastivePair<'a> {
    pub anchor: usize,
    pub positive: Positive<'a>,
    pub negatives: Vec<usize>,
}

/// Mean contrastive loss over `pairs`; when `grads` is given, accumulates
/// `scale * dL/d(row)` into it (one entry per table row).
pub fn contrastive_with_grad(
    table: &[Vec<f64>],
    pairs: &[ContrastivePair<'_>],
    scale: f64,
    mut grads: Option<&mut [Vec<f64>]>,
) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let inv_n = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    let mut sims = Vec::new();
    for pair in pairs {
        let a = &table[pair.anchor];
        let p: &[f64] = match pair.positive {
            Positive::Row(i) => &table[i],
            Positive::Fixed(v) => v,
        };
        sims.clear();
        sims.extend(pair.negatives.iter().map(|&j| cosine(a, &table[j])));
        let pos = cosine(a, p);
        total += log_sum_exp(&sims) - pos;
        if let Some(g) = grads.as_deref_mut() {
            let s = scale * inv_n;
            let mut ga = vec![0.0; a.len()];
            cosine_grad(a, p, -s, &mut ga);
            if let Positive::Row(i) = pair.positive {
                cosine_grad(p, a, -s, &mut g[i]);
            }
            softmax_in_place(&mut sims);
            for (&j, &w) in pair.negatives.iter().zip(sims.iter()) {
                let n = &table[j];
                cosine_grad(a, n, s * w, &mut ga);
                cosine_grad(n, a, s * w, &mut g[j]);
            }
            axpy(1.0, &ga, &mut g[pair.anchor]);
        }
    }
    total * inv_n
}

/// Per-class mean of few-shot target embeddings. Used as gradient
/// constants wherever they appear.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// `(C, d)`
    pub prototypes: Matrix,
    pub refresh_epoch: usize,
}

impl PrototypeBank {
    pub fn get(&self, class: usize) -> Result<&[f64]> {
        if class >= self.prototypes.rows {
            return Err(Error::MissingClass(class));
        }
        Ok(self.prototypes.row(class))
    }
}

pub fn compute_prototypes(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    class_count: usize,
    refresh_epoch: usize,
) -> Result<PrototypeBank> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::Shape("need one label per embedding".into()));
    }
    let d = embeddings[0].len();
    let mut sums = Matrix::zeros(class_count, d);
    let mut counts = vec![0usize; class_count];
    for (e, &l) in embeddings.iter().zip(labels) {
        if l >= class_count {
            return Err(Error::InvalidArgument(format!("label {l} out of range")));
        }
        counts[l] += 1;
        axpy(1.0, e, sums.row_mut(l));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass(c));
    }
    for (c, &n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(PrototypeBank {
        prototypes: sums,
        refresh_epoch,
    })
}

fn check_negatives(labels: &[usize], negative_labels: &[Vec<usize>]) -> Result<()> {
    for (i, (l, negs)) in labels.iter().zip(negative_labels).enumerate() {
        if negs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "anchor {i} has no negatives"
            )));
        }
        if negs.contains(l) {
            return Err(Error::InvalidArgument(format!(
                "anchor {i} has a negative sharing its label {l}"
            )));
        }
    }
    Ok(())
}

/// Pulls source embeddings toward their class prototype and away from
/// other-class negatives.
pub fn cdia_loss(
    source: &[Vec<f64>],
    labels: &[usize],
    prototypes: &PrototypeBank,
    negatives: &[Vec<Vec<f64>>],
    negative_labels: &[Vec<usize>],
) -> Result<f64> {
    if source.len() != labels.len() || source.len() != negatives.len() {
        return Err(Error::Shape(
            "anchors, labels and negatives differ in length".into(),
        ));
    }
    check_negatives(labels, negative_labels)?;
    let mut table: Vec<Vec<f64>> = source.to_vec();
    let mut pairs = Vec::with_capacity(source.len());
    for (i, &l) in labels.iter().enumerate() {
        let proto = prototypes.get(l)?;
        let start = table.len();
        table.extend(negatives[i].iter().cloned());
        pairs.push((i, proto, (start..table.len()).collect::<Vec<_>>()));
    }
    let pairs: Vec<ContrastivePair<'_>> = pairs
        .into_iter()
        .map(|(anchor, proto, negatives)| ContrastivePair {
            anchor,
            positive: Positive::Fixed(proto),
            negatives,
        })
        .collect();
    Ok(contrastive_with_grad(&table, &pairs, 1.0, None))
}

/// Contrastive loss on synthesized embeddings: positives are the same
/// sequences with their snippets shuffled in time.
pub fn aux_loss(
    anchors: &[Vec<f64>],
    labels: &[usize],
    positives: &[Vec<f64>],
    negatives: &[Vec<Vec<f64>>],
    negative_labels: &[Vec<usize>],
) -> Result<f64> {
    if anchors.len() != positives.len()
        || anchors.len() != negatives.len()
        || anchors.len() != labels.len()
    {
        return Err(Error::Shape(
            "anchors, positives and negatives differ in length".into(),
        ));
    }
    if negatives.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty negative pool".into()));
    }
    check_negatives(labels, negative_labels)?;
    let n = anchors.len();
    let mut table: Vec<Vec<f64>> = anchors.to_vec();
    table.extend(positives.iter().cloned());
    let mut pairs = Vec::with_capacity(n);
    for (i, negs) in negatives.iter().enumerate() {
        let start = table.len();
        table.extend(negs.iter().cloned());
        pairs.push(ContrastivePair {
            anchor: i,
            positive: Positive::Row(n + i),
            negatives: (start..table.len()).collect(),
        });
    }
    Ok(contrastive_with_grad(&table, &pairs, 1.0, None))
}

/// Mean negative log-likelihood of the true class, with
/// `scale * dL/dlogits` per row.
pub fn cross_entropy_with_grad(
    logits: &[Vec<f64>],
    labels: &[usize],
    scale: f64,
) -> (f64, Vec<Vec<f64>>) {
    if logits.is_empty() {
        return (0.0, Vec::new());
    }
    let inv_n = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &l) in logits.iter().zip(labels) {
        total += log_sum_exp(row) - row[l];
        let mut p = row.clone();
        softmax_in_place(&mut p);
        p[l] -= 1.0;
        p.iter_mut().for_each(|v| *v *= scale * inv_n);
        grads.push(p);
    }
    (total * inv_n, grads)
}

pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Shape("one label per logit row required".into()));
    }
    for (row, &l) in logits.iter().zip(labels) {
        if l >= row.len() {
            return Err(Error::InvalidArgument(format!("label {l} out of range")));
        }
    }
    Ok(cross_entropy_with_grad(logits, labels, 1.0).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn bank(rows: &[Vec<f64>]) -> PrototypeBank {
        PrototypeBank {
            prototypes: Matrix::from_rows(rows),
            refresh_epoch: 0,
        }
    }

    #[test]
    fn cdia_analytic_cases() {
        // cos(pos) = 1, one orthogonal negative: -log(e^1 / e^0) = -1
        let l = cdia_loss(
            &[vec![1.0, 0.0]],
            &[0],
            &bank(&[vec![2.0, 0.0], vec![0.0, 1.0]]),
            &[vec![vec![0.0, 3.0]]],
            &[vec![1]],
        )
        .unwrap();
        assert!((l + 1.0).abs() < 1e-12);
        // equal similarities cancel
        let l = cdia_loss(
            &[vec![1.0, 1.0]],
            &[0],
            &bank(&[vec![1.0, 0.0], vec![0.0, 0.0]]),
            &[vec![vec![0.0, 1.0]]],
            &[vec![1]],
        )
        .unwrap();
        assert!(l.abs() < 1e-12);
        // cos(pos) = 0 with two orthogonal negatives: ln 2
        let l = cdia_loss(
            &[vec![1.0, 0.0, 0.0]],
            &[0],
            &bank(&[vec![0.0, 1.0, 0.0], vec![0.0; 3]]),
            &[vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 2.0]]],
            &[vec![1, 1]],
        )
        .unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cdia_contract_errors() {
        let b = bank(&[vec![1.0, 0.0]]);
        assert!(cdia_loss(
            &[vec![1.0, 0.0]],
            &[1],
            &b,
            &[vec![vec![0.0, 1.0]]],
            &[vec![0]]
        )
        .is_err());
        assert!(cdia_loss(
            &[vec![1.0, 0.0]],
            &[0],
            &b,
            &[vec![vec![0.0, 1.0]]],
            &[vec![0]]
        )
        .is_err());
        assert!(cdia_loss(&[vec![1.0, 0.0]], &[0], &b, &[vec![]], &[vec![]]).is_err());
    }

    #[test]
    fn zero_vector_cosine_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn prototypes_are_class_means() {
        let b = compute_prototypes(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]],
            &[0, 0, 1],
            2,
            0,
        )
        .unwrap();
        assert_eq!(b.get(0).unwrap(), &[0.5, 0.5]);
        assert_eq!(b.get(1).unwrap(), &[3.0, 3.0]);
        assert!(matches!(
            compute_prototypes(&[vec![1.0]], &[0], 2, 0),
            Err(Error::MissingClass(1))
        ));
    }

    #[test]
    fn prototypes_match_group_by() {
        let mut rng = rng_for(3, &[]);
        let emb: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let b = compute_prototypes(&emb, &labels, 4, 0).unwrap();
        for c in 0..4 {
            for k in 0..5 {
                let vals: Vec<f64> = emb
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(e, _)| e[k])
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                assert!((b.get(c).unwrap()[k] - mean).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn aux_cases() {
        let l = aux_loss(
            &[vec![1.0, 0.0]],
            &[0],
            &[vec![1.0, 0.0]],
            &[vec![vec![0.0, 1.0]]],
            &[vec![1]],
        )
        .unwrap();
        assert!((l + 1.0).abs() < 1e-12);
        let l = aux_loss(
            &[vec![1.0, 1.0]],
            &[0],
            &[vec![2.0, 2.0]],
            &[vec![vec![3.0, 3.0]]],
            &[vec![1]],
        )
        .unwrap();
        assert!(l.abs() < 1e-12);
        assert!(aux_loss(&[vec![1.0]], &[0], &[vec![1.0]], &[vec![]], &[vec![]]).is_err());
        // loss falls as the positive aligns with the anchor
        let at = |theta: f64| {
            aux_loss(
                &[vec![1.0, 0.0, 0.0]],
                &[0],
                &[vec![theta.cos(), theta.sin(), 0.0]],
                &[vec![vec![0.0, 0.0, 1.0]]],
                &[vec![1]],
            )
            .unwrap()
        };
        let (l0, l5, l1) = (
            at(std::f64::consts::FRAC_PI_2),
            at(std::f64::consts::FRAC_PI_3),
            at(0.0),
        );
        assert!(l0 > l5 && l5 > l1);
        assert!((l5 - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let l = cross_entropy(&[vec![0.3; 4]], &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let l = cross_entropy(&[vec![0.0, 20.0, 0.0]], &[1]).unwrap();
        assert!(l < 1e-8);
        assert!(cross_entropy(&[vec![0.0, 1.0]], &[2]).is_err());
    }

    #[test]
    fn cross_entropy_matches_per_sample_formula() {
        let mut rng = rng_for(9, &[]);
        let logits: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..6).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| (i * 7) % 6).collect();
        let mut brute = 0.0;
        for (row, &l) in logits.iter().zip(&labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            brute -= (row[l].exp() / z).ln();
        }
        brute /= 30.0;
        assert!((cross_entropy(&logits, &labels).unwrap() - brute).abs() < 1e-7);
    }

    #[test]
    fn total_loss_weights() {
        let w = LossWeights::default();
        let c = LossComponents {
            ce_source: 2.0,
            ..Default::default()
        };
        assert_eq!(total_loss(&c, &w).unwrap(), 2.0);
        let c = LossComponents {
            cdia: 10.0,
            ..Default::default()
        };
        assert!((total_loss(&c, &w).unwrap() - 0.001).abs() < 1e-15);
        assert_eq!(total_loss(&LossComponents::default(), &w).unwrap(), 0.0);
        let c = LossComponents {
            aux: f64::NAN,
            ..Default::default()
        };
        assert!(total_loss(&c, &w)
            .unwrap_err()
            .to_string()
            .contains("L_aux"));
    }

    #[test]
    fn contrastive_gradient_matches_difference() {
        let mut rng = rng_for(5, &[]);
        let table: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let proto = vec![0.2, -0.4, 0.9, 0.1];
        let pairs = vec![
            ContrastivePair {
                anchor: 0,
                positive: Positive::Row(1),
                negatives: vec![2, 3],
            },
            ContrastivePair {
                anchor: 4,
                positive: Positive::Fixed(&proto),
                negatives: vec![0, 5, 2],
            },
        ];
        let mut g = vec![vec![0.0; 4]; 6];
        contrastive_with_grad(&table, &pairs, 1.0, Some(&mut g));
        for r in 0..6 {
            for c in 0..4 {
                let mut tp = table.clone();
                let mut tm = table.clone();
                tp[r][c] += 1e-6;
                tm[r][c] -= 1e-6;
                let fd = (contrastive_with_grad(&tp, &pairs, 1.0, None)
                    - contrastive_with_grad(&tm, &pairs, 1.0, None))
                    / 2e-6;
                assert!((fd - g[r][c]).abs() < 1e-7, "row {r} col {c}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn cosine_losses_are_scale_invariant(
            a in proptest::collection::vec(-3.0f64..3.0, 3),
            p in proptest::collection::vec(-3.0f64..3.0, 3),
            n in proptest::collection::vec(-3.0f64..3.0, 3),
            s in 0.01f64..100.0,
        ) {
            let b = bank(&[p.clone(), vec![0.0; 3]]);
            let base = cdia_loss(std::slice::from_ref(&a), &[0], &b, &[vec![n.clone()]], &[vec![1]]).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
            let sn: Vec<f64> = n.iter().map(|v| v * s).collect();
            let moved = cdia_loss(std::slice::from_ref(&scaled), &[0], &b, &[vec![sn.clone()]], &[vec![1]]).unwrap();
            proptest::prop_assert!((base - moved).abs() < 1e-6);
            let aux_a = aux_loss(std::slice::from_ref(&a), &[0], std::slice::from_ref(&p), &[vec![n.clone()]], &[vec![1]]).unwrap();
            let aux_b = aux_loss(&[scaled], &[0], &[p], &[vec![sn]], &[vec![1]]).unwrap();
            proptest::prop_assert!((aux_a - aux_b).abs() < 1e-6);
        }

        #[test]
        fn more_negatives_never_lower_the_loss(
            a in proptest::collection::vec(-3.0f64..3.0, 3),
            p in proptest::collection::vec(-3.0f64..3.0, 3),
            n in proptest::collection::vec(-3.0f64..3.0, 3),
            extra in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            // the added negative's similarity never exceeds the existing one
            proptest::prop_assume!(cosine(&a, &extra) <= cosine(&a, &n));
            let b = bank(&[p, vec![0.0; 3]]);
            let one = cdia_loss(std::slice::from_ref(&a), &[0], &b, &[vec![n.clone()]], &[vec![1]]).unwrap();
            let two = cdia_loss(&[a], &[0], &b, &[vec![n, extra]], &[vec![1, 1]]).unwrap();
            proptest::prop_assert!(two >= one);
        }
    }
}
