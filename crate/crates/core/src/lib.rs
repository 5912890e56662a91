//! FLOPs-budgeted magnitude pruning for convolutional networks.
//!
//! The crate is organised around [`ModelGraph`], an ordered list of layers
//! backed by one contiguous `f32` weight buffer. Every tool reads or produces
//! one:
//!
//! * [`model`] loads and saves graphs, counts multiply-accumulates and folds
//!   pointwise convolutions into linear layers.
//! * [`prune`] builds global, uniform and 1x4-block magnitude masks.
//! * [`solver`] turns a FLOPs budget into a sparsity level.
//! * [`sparse`] quantizes pruned layers to int8 and runs them through a
//!   block-sparse kernel.
//! * [`train`] runs forward/backward passes, masked SGD fine-tuning and
//!   evaluation on small datasets.
//! * [`analysis`] covers layer sensitivity, sparsity patterns and compute
//!   cost accounting.

pub mod analysis;
pub mod error;
pub mod model;
pub mod prune;
pub mod solver;
pub mod sparse;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use model::{FlopsReport, LayerSpec, ModelGraph, OpKind, Role};
pub use prune::{PruneMethod, PruneReport, SparsityMask};
pub use solver::{FlopsTarget, SolveResult};

/// Version string embedded in every artifact the toolkit writes.
pub const TOOLKIT_VERSION: &str = concat!("prunekit ", env!("CARGO_PKG_VERSION"));
