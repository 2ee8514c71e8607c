//! Multi-scale relation index sets.
//!
//! A relation tuple at scale `r` is a strictly increasing list of `r`
//! snippet indices (0-based). There is one scale per `r` in `2..=N`, so a
//! sequence of `N` snippets has `N - 1` scales.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Enumerating every tuple is cheaper than rejection sampling below this.
const ENUMERATION_LIMIT: u128 = 200_000;

pub type RelationTuple = Vec<usize>;

pub fn enumerate_scales(length: usize) -> Result<Vec<usize>> {
    if length < 2 {
        return Err(Error::InvalidArgument(format!(
            "relations need at least 2 snippets, got {length}"
        )));
    }
    Ok((2..=length).collect())
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All strictly increasing `scale`-tuples over `0..length`, lexicographic.
pub fn all_tuples(length: usize, scale: usize) -> Vec<RelationTuple> {
    let mut out = Vec::new();
    if scale == 0 || scale > length {
        return out;
    }
    let mut cur: Vec<usize> = (0..scale).collect();
    loop {
        out.push(cur.clone());
        // rightmost position that can still advance
        let Some(pos) = (0..scale).rev().find(|&i| cur[i] < length - scale + i) else {
            break;
        };
        cur[pos] += 1;
        for i in pos + 1..scale {
            cur[i] = cur[i - 1] + 1;
        }
    }
    out
}

/// Draws `count` distinct tuples uniformly without replacement and returns
/// them in lexicographic order.
pub fn sample_relation_tuples(
    length: usize,
    scale: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<RelationTuple>> {
    if scale < 2 || scale > length {
        return Err(Error::InvalidArgument(format!(
            "scale {scale} outside [2, {length}]"
        )));
    }
    let max = binomial(length, scale);
    if count == 0 || count as u128 > max {
        return Err(Error::TooManyTuples {
            requested: count,
            max,
            length,
            scale,
        });
    }
    let mut rng = rng_for(seed, &[0x7e1a, length as u64, scale as u64]);
    let mut picked = if max <= ENUMERATION_LIMIT {
        let all = all_tuples(length, scale);
        index::sample(&mut rng, all.len(), count)
            .into_iter()
            .map(|i| all[i].clone())
            .collect::<Vec<_>>()
    } else {
        let mut seen = std::collections::BTreeSet::new();
        while seen.len() < count {
            let mut t = index::sample(&mut rng, length, scale).into_vec();
            t.sort_unstable();
            seen.insert(t);
        }
        seen.into_iter().collect()
    };
    picked.sort();
    Ok(picked)
}

/// Default number of tuples kept per scale.
pub fn default_tuples_per_scale(length: usize, scale: usize) -> usize {
    binomial(length, scale).min(3) as usize
}

/// The tuples used to aggregate one sequence length, for every scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPlan {
    pub sequence_length: usize,
    pub scales: Vec<usize>,
    /// `tuples[i]` belongs to `scales[i]`.
    pub tuples: Vec<Vec<RelationTuple>>,
    pub seed: u64,
}

impl RelationPlan {
    /// Samples `min(per_scale, C(N, r))` tuples at every scale. `None` uses
    /// the default cap of three.
    pub fn sample(length: usize, per_scale: Option<usize>, seed: u64) -> Result<Self> {
        let scales = enumerate_scales(length)?;
        let tuples = scales
            .iter()
            .map(|&r| {
                let cap = per_scale.unwrap_or(3).max(1) as u128;
                let m = binomial(length, r).min(cap) as usize;
                sample_relation_tuples(length, r, m, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sequence_length: length,
            scales,
            tuples,
            seed,
        })
    }

    /// Every tuple at every scale.
    pub fn exhaustive(length: usize) -> Result<Self> {
        let scales = enumerate_scales(length)?;
        let tuples = scales.iter().map(|&r| all_tuples(length, r)).collect();
        Ok(Self {
            sequence_length: length,
            scales,
            tuples,
            seed: 0,
        })
    }

    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    pub fn tuple_count(&self) -> usize {
        self.tuples.iter().map(Vec::len).sum()
    }
}
