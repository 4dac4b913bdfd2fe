//! Identify the parameters of a teacher network from input/output samples by
//! training an overparameterised ensemble of students, reducing each student
//! modulo the activation's symmetries, and clustering hidden neurons across
//! students.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod seeds;
pub mod symmetry;
pub mod teacher;
pub mod trainer;

pub use activation::{Activation, SymmetryClass};
pub use data::Dataset;
pub use error::{Error, Result};
pub use net::{Layer, NetworkParams};
