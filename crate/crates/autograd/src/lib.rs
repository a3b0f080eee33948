//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Everything is two-dimensional: a batch of sequences is flattened to
//! `(batch * seq, width)` rows and the sequence-aware ops (attention, the
//! row gather used for embedding lookups) carry their own shape metadata.
//! Parameters live in a [`ParamStore`]; a [`Graph`] borrows the store for
//! one forward/backward pass and hands back [`Gradients`] keyed by
//! [`ParamId`].

mod graph;
pub mod init;
mod optim;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{BlobError, ParamId, ParamStore};

/// Dense row-major matrix used for every value in the tape.
pub type Mat = ndarray::Array2<f64>;
