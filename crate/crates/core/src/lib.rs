//! Training engine for unsupervised domain adaptation with latent-domain
//! discovery.
//!
//! The engine normalizes activations with multi-domain alignment layers
//! ([`mda::MdaLayer`]): each sample carries a soft assignment over latent
//! domains, per-domain batch statistics are estimated with those weights,
//! and the normalized values are recombined per sample. Assignments come
//! from a small domain-prediction branch ([`domain_branch::DomainBranch`])
//! trained jointly with the classifier through an entropy-based composite
//! loss ([`losses`]).
//!
//! Everything runs on plain `f64` tensors on the CPU; all backward passes
//! are hand-written and validated against central finite differences
//! ([`gradcheck`]).

pub mod checkpoint;
pub mod data;
pub mod domain_branch;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod losses;
pub mod mda;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod tensor;

use thiserror::Error;

/// Errors surfaced by the engine. Numerical problems are never silently
/// propagated: a NaN/Inf produced by a public operation becomes
/// [`Error::NonFinite`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("math domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
