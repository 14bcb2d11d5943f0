//! Tabular MDPs and Bellman-operator variants for studying action gaps.
//!
//! The crate is organized bottom-up:
//!
//! - [`mdp`]: MDPs, Q tables, policies and the exact reference solvers.
//! - [`operators`]: optimal, smooth, advantage-learning, smoothing-advantage
//!   and soft (mellowmax) operators.
//! - [`iteration`]: exact and noise-injected value iteration with traces.
//! - [`analysis`]: closed-form fixed points, gap laws, error bounds.
//! - [`exec`]: sequential or rayon-backed batch evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod exec;
pub mod iteration;
pub mod mdp;
pub mod operators;

pub use error::{Error, ParameterError, Result};
pub use exec::Execution;
pub use iteration::{iterate, iterate_limit, IterationTrace, NoiseKind, NoiseModel};
pub use mdp::{Policy, QFunction, TabularMdp};
pub use operators::{OperatorSpec, OperatorVariant};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
