//! Staged pre-training workbench for tiny decoder-only Transformers.
//!
//! The pipeline trains a small GPT-style model on symbolic music, moves the
//! vocabulary-independent weights into a language model, and continues on
//! poetry and then prose. Everything is deterministic given a seed: tensor
//! math, data generation, shuffling and initialization all draw from named
//! [`nn::Rng`] streams.
//!
//! Module map:
//! - [`nn`]: tensors, seeded randomness and the differentiable kernels.
//! - [`model`]: the decoder-only Transformer and its checkpoint format.
//! - [`midi`]: the 160-token music vocabulary and its grammar.
//! - [`synth`]: rule-based synthetic music.
//! - [`corpus`]: chunking, MAESTRO tables and text codecs.
//! - [`transfer`]: selective weight transfer across vocabularies.
//! - [`train`]: optimizer, schedule and the phase training loop.
//! - [`exp`]: manifests, the condition runner, statistics and probes.

pub mod corpus;
pub mod error;
pub mod exp;
pub mod midi;
pub mod model;
pub mod nn;
pub mod par;
pub mod synth;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};

/// Tokens per chunk: 256 inputs plus the shifted final target.
pub const CHUNK_LEN: usize = 257;
