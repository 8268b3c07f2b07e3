//! Interest-aware capsule network (IaCN) trained as an auxiliary task next to
//! small click-through-rate models.
//!
//! Item embeddings are split into an original segment, updated only by the
//! CTR loss, and an auxiliary segment shared with a capsule network that
//! extracts a user's interests by dynamic routing. Gradients reaching the
//! auxiliary segment from both losses are mixed with a ratio δ before the
//! optimizer step.

pub mod capsule;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod io;
pub mod kv;
pub mod math;
pub mod models;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
