//! Core data types: snippet feature sequences, datasets, and the few-shot
//! split protocol.

mod io;
mod split;
mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    decode_payload, encode_payload, read_dataset, read_manifest, read_payload, write_dataset,
    write_payload, Manifest, ManifestEntry, MANIFEST_FILE,
};
pub use split::{sample_few_shot_split, FewShotSplit};
pub use window::window_snippets;

/// Which distribution a sequence was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
    Synthesized,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
            Domain::Synthesized => "synthesized",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            "synthesized" => Ok(Domain::Synthesized),
            other => Err(Error::InvalidArgument(format!("unknown domain '{other}'"))),
        }
    }
}

/// Dense row-major `f32` matrix. Rows are snippets (or frames), columns are
/// feature dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

/// One sample: its per-snippet feature matrix plus label and domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetSequence {
    pub sample_id: String,
    pub label: usize,
    pub domain: Domain,
    pub features: FeatureMatrix,
}

impl SnippetSequence {
    pub fn new(
        sample_id: impl Into<String>,
        label: usize,
        domain: Domain,
        features: FeatureMatrix,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if features.rows() < 2 || features.cols() < 1 {
            return Err(Error::Shape(format!(
                "sequence '{sample_id}' has shape {}x{}; need at least 2 snippets and 1 dimension",
                features.rows(),
                features.cols()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite(format!("sequence '{sample_id}'")));
        }
        Ok(Self {
            sample_id,
            label,
            domain,
            features,
        })
    }

    pub fn snippet_count(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Copy with snippet rows reordered: row `t` of the result is row
    /// `order[t]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut features = FeatureMatrix::zeros(self.snippet_count(), self.dim());
        for (t, &src) in order.iter().enumerate() {
            features.row_mut(t).copy_from_slice(self.features.row(src));
        }
        Self {
            sample_id: self.sample_id.clone(),
            label: self.label,
            domain: self.domain,
            features,
        }
    }
}

/// An ordered collection of equally shaped sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    sequences: Vec<SnippetSequence>,
    class_count: usize,
    snippet_count: usize,
    dim: usize,
}

impl FeatureDataset {
    /// Validates shapes and labels and sorts the sequences by `sample_id`.
    pub fn new(
        mut sequences: Vec<SnippetSequence>,
        class_count: usize,
        snippet_count: usize,
        dim: usize,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::InvalidArgument(
                "class_count must be positive".into(),
            ));
        }
        for s in &sequences {
            if s.snippet_count() != snippet_count || s.dim() != dim {
                return Err(Error::Shape(format!(
                    "sequence '{}' is {}x{}, dataset expects {snippet_count}x{dim}",
                    s.sample_id,
                    s.snippet_count(),
                    s.dim()
                )));
            }
            if s.label >= class_count {
                return Err(Error::InvalidArgument(format!(
                    "sequence '{}' has label {} outside [0, {class_count})",
                    s.sample_id, s.label
                )));
            }
        }
        sequences.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        if let Some(w) = sequences
            .windows(2)
            .find(|w| w[0].sample_id == w[1].sample_id)
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate sample id '{}'",
                w[0].sample_id
            )));
        }
        Ok(Self {
            sequences,
            class_count,
            snippet_count,
            dim,
        })
    }

    pub fn sequences(&self) -> &[SnippetSequence] {
        &self.sequences
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn snippet_count(&self) -> usize {
        self.snippet_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label).collect()
    }

    /// Sequence indices grouped by class, each group in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count];
        for (i, s) in self.sequences.iter().enumerate() {
            groups[s.label].push(i);
        }
        groups
    }

    pub fn get(&self, sample_id: &str) -> Option<&SnippetSequence> {
        self.sequences
            .binary_search_by(|s| s.sample_id.as_str().cmp(sample_id))
            .ok()
            .map(|i| &self.sequences[i])
    }

    /// Sub-dataset holding only the given ids, shape metadata preserved.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut picked = Vec::new();
        for id in ids {
            let s = self
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown sample id '{id}'")))?;
            picked.push(s.clone());
        }
        Self::new(picked, self.class_count, self.snippet_count, self.dim)
    }

    /// Checks that two datasets agree on (snippets, dim, classes).
    pub fn ensure_compatible(&self, other: &Self) -> Result<()> {
        if (self.snippet_count, self.dim, self.class_count)
            != (other.snippet_count, other.dim, other.class_count)
        {
            return Err(Error::Shape(format!(
                "datasets disagree: (T={}, d={}, C={}) vs (T={}, d={}, C={})",
                self.snippet_count,
                self.dim,
                self.class_count,
                other.snippet_count,
                other.dim,
                other.class_count
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, label: usize) -> SnippetSequence {
        SnippetSequence::new(id, label, Domain::Source, FeatureMatrix::zeros(2, 3)).unwrap()
    }

    #[test]
    fn dataset_sorts_by_id() {
        let ds = FeatureDataset::new(vec![seq("b", 0), seq("a", 1)], 2, 2, 3).unwrap();
        assert_eq!(ds.sequences()[0].sample_id, "a");
        assert!(ds.get("b").is_some());
        assert!(ds.get("c").is_none());
    }

    #[test]
    fn rejects_out_of_range_label_and_shape() {
        assert!(FeatureDataset::new(vec![seq("a", 2)], 2, 2, 3).is_err());
        assert!(FeatureDataset::new(vec![seq("a", 0)], 2, 3, 3).is_err());
        assert!(FeatureDataset::new(vec![seq("a", 0), seq("a", 1)], 2, 2, 3).is_err());
    }

    #[test]
    fn sequence_rejects_non_finite_and_short() {
        let bad = FeatureMatrix::new(2, 1, vec![0.0, f32::NAN]).unwrap();
        assert!(SnippetSequence::new("x", 0, Domain::Target, bad).is_err());
        let short = FeatureMatrix::zeros(1, 4);
        assert!(SnippetSequence::new("x", 0, Domain::Target, short).is_err());
    }

    #[test]
    fn permutation_moves_rows() {
        let m = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let s = SnippetSequence::new("x", 0, Domain::Source, m).unwrap();
        let p = s.permuted(&[2, 0, 1]);
        assert_eq!(p.features.as_slice(), &[3.0, 1.0, 2.0]);
    }
}
