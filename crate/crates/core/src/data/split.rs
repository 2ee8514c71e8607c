use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

use super::FeatureDataset;

/// The fixed labeled target subset used for adaptation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub shot_count: usize,
    pub seed: u64,
    /// `selected_ids[c]` lists the ids picked for class `c`, in dataset order.
    pub selected_ids: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FewShotSplit {
    pub fn total(&self) -> usize {
        self.selected_ids.iter().map(Vec::len).sum()
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &str> {
        self.selected_ids.iter().flatten().map(String::as_str)
    }

    /// Materializes the split as a dataset.
    pub fn apply(&self, pool: &FeatureDataset) -> Result<FeatureDataset> {
        pool.subset(self.all_ids())
    }
}

/// Picks `shot_count` sequences per class uniformly without replacement.
///
/// A class with fewer members contributes all of them and a warning is
/// recorded (and logged) instead of failing.
pub fn sample_few_shot_split(
    dataset: &FeatureDataset,
    shot_count: usize,
    seed: u64,
) -> Result<FewShotSplit> {
    if shot_count == 0 {
        return Err(Error::InvalidArgument("shot_count must be >= 1".into()));
    }
    let mut selected_ids = Vec::with_capacity(dataset.class_count());
    let mut warnings = Vec::new();
    for (class, members) in dataset.indices_by_class().into_iter().enumerate() {
        let take = shot_count.min(members.len());
        if take < shot_count {
            let msg = format!(
                "class {class} has {} samples, fewer than shot count {shot_count}; taking all",
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut rng = rng_for(seed, &[0x5907, class as u64]);
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        selected_ids.push(
            picked
                .into_iter()
                .map(|i| dataset.sequences()[i].sample_id.clone())
                .collect(),
        );
    }
    Ok(FewShotSplit {
        shot_count,
        seed,
        selected_ids,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, FeatureMatrix, SnippetSequence};

    fn dataset(per_class: &[usize]) -> FeatureDataset {
        let mut seqs = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                seqs.push(
                    SnippetSequence::new(
                        format!("c{c}_{i:03}"),
                        c,
                        Domain::Target,
                        FeatureMatrix::zeros(2, 1),
                    )
                    .unwrap(),
                );
            }
        }
        FeatureDataset::new(seqs, per_class.len(), 2, 1).unwrap()
    }

    #[test]
    fn one_shot_is_deterministic() {
        let ds = dataset(&[3]);
        let a = sample_few_shot_split(&ds, 1, 0).unwrap();
        let b = sample_few_shot_split(&ds, 1, 0).unwrap();
        assert_eq!(a.selected_ids[0].len(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn undersized_class_takes_all_with_warning() {
        let ds = dataset(&[2, 8]);
        let split = sample_few_shot_split(&ds, 5, 3).unwrap();
        assert_eq!(split.selected_ids[0], vec!["c0_000", "c0_001"]);
        assert_eq!(split.selected_ids[1].len(), 5);
        assert_eq!(split.warnings.len(), 1);
    }

    #[test]
    fn ten_classes_five_shots_gives_fifty() {
        let ds = dataset(&[12; 10]);
        let split = sample_few_shot_split(&ds, 5, 11).unwrap();
        assert_eq!(split.total(), 50);
        assert!(split.warnings.is_empty());
        let sub = split.apply(&ds).unwrap();
        assert_eq!(sub.len(), 50);
    }

    #[test]
    fn rejects_zero_shots() {
        assert!(sample_few_shot_split(&dataset(&[3]), 0, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_is_deterministic_and_distinct(sizes in proptest::collection::vec(1usize..15, 1..6), shot in 1usize..8, seed in 0u64..1000) {
            let ds = dataset(&sizes);
            let a = sample_few_shot_split(&ds, shot, seed).unwrap();
            let b = sample_few_shot_split(&ds, shot, seed).unwrap();
            proptest::prop_assert_eq!(&a, &b);
            for (c, ids) in a.selected_ids.iter().enumerate() {
                proptest::prop_assert_eq!(ids.len(), shot.min(sizes[c]));
                let mut dedup = ids.clone();
                dedup.dedup();
                proptest::prop_assert_eq!(dedup.len(), ids.len());
            }
        }
    }
}
