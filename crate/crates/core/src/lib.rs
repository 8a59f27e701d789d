//! Joint information extraction as a high-order conditional random field.
//!
//! The pipeline has two stages. A node identification module tags trigger
//! and entity spans with two independent linear-chain CRFs. A node/edge
//! labeling module then scores unary, binary (sibling / co-parent /
//! grandparent) and ternary (node-edge-node) factors over the candidate
//! graph and runs a fixed number of mean-field variational inference steps,
//! unfolded as differentiable layers so training and inference share one
//! code path. Exact enumeration oracles back the approximate inference and
//! the gradients are checked against central finite differences.

pub mod data;
pub mod encoder;
pub mod error;
pub mod identify;
pub mod inference;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod schema;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
