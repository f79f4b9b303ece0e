//! Metapath- and entity-aware graph neural network for top-k recommendation.
//!
//! The crate covers the whole pipeline: heterogeneous graph ingestion and
//! filtering ([`hin`]), metapath schemas and their per-hop propagation
//! matrices ([`metapath`]), GCN/GAT/GraphSage step layers ([`layers`]), the
//! fused model with BPR and entity-contrast losses ([`model`]), Adam training
//! with early stopping ([`train`]) and leave-one-out ranking evaluation
//! ([`eval`]).

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hin;
pub mod layers;
pub mod metapath;
pub mod model;
pub mod par;
pub mod sparse;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
