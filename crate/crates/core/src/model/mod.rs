//! The relational attention aggregator and its classifier head.

mod aggregate;
pub mod block;
mod checkpoint;
mod params;

pub use aggregate::{
    aggregate, backward, classify, forward, rd_mhsa, relation_dropout, retained_count,
    scale_wise_mhsa, sequence_matrix, AggregatedEmbedding, ForwardTrace, Mode, Switches,
};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use params::{AttentionParams, HeadCombine, ModelConfig, TensorView, TranRdParameters};
