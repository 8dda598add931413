//! Knowledge-graph embedding engine.
//!
//! Trains TransE (L1/L2), RotatE, RESCAL, DistMult and ComplEx on
//! `(head, relation, tail)` triples with logistic loss, evaluates them with
//! raw and filtered ranking metrics, and ranks candidate drugs against
//! disease targets through treatment relations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod repurpose;
pub mod train;

pub use error::{KgeError, Result};
pub use graph::{FilterIndex, RawTriple, Triple, Vocabulary};
pub use model::{init_params, ModelKind, ModelParams};
pub use train::{train, TrainConfig};
