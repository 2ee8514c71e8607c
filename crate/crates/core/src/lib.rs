//! Few-shot domain adaptation on snippet-level activity features.
//!
//! The crate works on pre-extracted per-snippet feature sequences and
//! provides:
//!
//! - [`data`]: sequence/dataset types, snippet windowing, the few-shot split
//!   protocol and the on-disk dataset format;
//! - [`synthetic`]: paired source/target datasets with a controllable shift;
//! - [`relation`]: multi-scale relation tuples;
//! - [`model`]: the relational attention aggregator with relation dropout;
//! - [`sdfm`]: statistics-based synthesis of target-domain features;
//! - [`losses`]: cross-domain alignment, auxiliary contrastive and
//!   cross-entropy objectives;
//! - [`baselines`]: random / kNN / nearest-center / nearest-neighbor;
//! - [`train`]: the co-training loop and evaluation;
//! - [`experiment`]: run directories, sweeps and reports.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod relation;
pub mod rng;
pub mod sdfm;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
