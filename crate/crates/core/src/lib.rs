//! Retrieval-augmented phrase similarity over a patent-style corpus.
//!
//! The pipeline: ingest a corpus of abstracts with citation links, extract a
//! phrase vocabulary with RAKE, build a BM25 inverted index, connect phrases
//! to their retrieved abstracts in a two-relation graph (retrieval edges and
//! citation edges), and train a small graph-attention encoder with a triplet
//! objective so that a phrase embedding combines its text with its sampled
//! ego graph.
//!
//! Modules follow the pipeline order:
//!
//! - [`corpus`]: records, tokenization, ingest, token statistics
//! - [`phrasegen`]: RAKE extraction and the phrase vocabulary
//! - [`retrieval`]: BM25 inverted index
//! - [`universe`]: phrase–patent graph and seeded ego-graph sampling
//! - [`encoder`]: initial node embeddings (hashed bag of tokens)
//! - [`gnn`]: graph-attention layers, forward and reverse passes
//! - [`model`]: parameter container and checkpoint files
//! - [`training`]: losses, batches, Adam, the training loops
//! - [`eval`]: similarity inference, correlations, baselines

pub mod corpus;
pub mod encoder;
mod error;
pub mod eval;
pub mod gnn;
pub mod model;
pub mod phrasegen;
pub mod retrieval;
pub mod rng;
pub mod training;
pub mod universe;

pub use error::{Error, Result};
