use thiserror::Error;

use crate::net::NetworkParams;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer}: {what}")]
    Numeric { layer: usize, what: String },

    #[error("degenerate activation: more than one symmetry identity holds")]
    DegenerateActivation,

    #[error("infeasible teacher spec: {0}")]
    InfeasibleSpec(String),

    #[error("degenerate teacher: output standard deviation {0:e} is below 1e-12")]
    DegenerateTeacher(f64),

    #[error("training diverged at step {step}")]
    Divergence {
        step: usize,
        last_finite: Box<NetworkParams>,
    },

    #[error("no cluster reaches the minimum size {min_size}")]
    EmptySelection { min_size: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("reduction stage `{stage}` broke functional equivalence (max deviation {deviation:e})")]
    Reduction { stage: &'static str, deviation: f64 },

    #[error("pipeline failed at layer {layer}: {source}")]
    Pipeline {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
