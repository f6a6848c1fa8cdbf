//! Collision-alleviated signal hashing (CASH) for online specific emitter
//! identification.
//!
//! A signal encoder maps IQ captures to embeddings, an online hasher turns
//! embeddings into binary codes, and a reciprocal-point identifier flags
//! whether a capture comes from an emitter seen during training. The code
//! concatenated with that flag indexes a growing hash table whose entries
//! are the predicted emitter identities.

pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod hasher;
pub mod identifier;
pub mod model;
pub mod nn;
pub mod online;
pub mod rng;
pub mod signal;
pub mod trainer;

pub use error::{CashError, Result};
