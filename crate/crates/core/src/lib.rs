//! Catalog-grounded constrained generation for LLM-style recommenders.
//!
//! An item segment in a generated response is delimited by the `<SOI>` and
//! `<EOI>` control tokens. Whatever the model produces between them is
//! grounded in a finite catalog through one of three strategies:
//!
//! * retrieval: the hidden state at `<SOI>` is projected into the item
//!   embedding space and the nearest item is inserted verbatim;
//! * title generation: decoding is masked by a prefix tree over catalog
//!   titles;
//! * code generation: decoding is masked by a prefix tree over the
//!   residual-quantization code tuples of the items.
//!
//! The crate also carries the training objectives used to teach a model
//! this behaviour, the rewards used for title rewriting and list-level RL,
//! and the evaluation metrics.

pub mod catalog;
pub mod decoder;
pub mod eval;
pub mod objectives;
pub mod rewards;
pub mod seed;
pub mod tokenizer;
pub mod trie;

/// Index of a token in a [`catalog::Vocab`].
pub type TokenId = u32;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use catalog::{Catalog, EmbeddingSet, InteractionLog, Item, Vocab};
pub use decoder::{DecodeOutput, DecodeState, GroundingStrategy, LanguageModel, Selection};
pub use trie::{PrefixTree, TreeBuilder, VisitCounts};
