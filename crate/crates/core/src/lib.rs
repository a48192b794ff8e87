//! Latent-space item decoding.
//!
//! A memory of `(hidden state, ground-truth item)` pairs is turned into item
//! representations by averaging hidden states per item, either over the
//! whole memory (global) or over a query's top-M nearest rows (local). Items
//! are decoded by ranking those representations by L2 distance to the
//! query's hidden state.

pub mod aggregation;
pub mod bench;
pub mod cli;
pub mod decoder;
pub mod evaluation;
pub mod grounding;
pub mod io;
pub mod memory;

pub use aggregation::{global_representations, local_representations, ItemRepTable, NeighborSet};
pub use decoder::{
    batch_decode, decode, decode_global, decode_local, DecodeConfig, Mode, Query, RankedList,
};
pub use memory::{build_memory, ItemId, MemoryRecord, MemorySet};
