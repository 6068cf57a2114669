//! Decentralized gradient descent (DGD) over a streaming, temporally weighted
//! objective.
//!
//! The crate simulates a network of agents that each receive one quadratic
//! sample per time index and run a fixed budget of DGD iterations before the
//! next sample arrives. Exact reference quantities (the weighted global
//! minimizer and the DGD fixed point) are computed alongside the iterates so
//! the tracking error, its fixed-point/bias decomposition, and the closed-form
//! tracking bounds can be certified run by run.
//!
//! Module map:
//!
//! * [`network`]: random geometric graphs, Metropolis mixing matrices, spectra.
//! * [`weighting`]: uniform and discounted temporal weights and their recursions.
//! * [`streaming`]: the drifting quadratic sample stream and weighted accumulators.
//! * [`dgd`]: the DGD operator and its E-fold composition.
//! * [`oracle`]: global minimizer, fixed point, and error records.
//! * [`theory`]: contraction factor, gradient bound, summation constants, envelopes.
//! * [`experiment`]: the time loop and Monte-Carlo aggregation.
//! * [`validation`]: the cross-module invariant suite behind `streamdgd validate`.

// Checks are written as `!(x <= tol)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csv;
pub mod dgd;
pub mod error;
pub mod experiment;
pub mod network;
pub mod oracle;
pub mod seed;
pub mod streaming;
pub mod theory;
pub mod validation;
pub mod weighting;

pub use config::ExperimentConfig;
pub use dgd::{Dgd, StackedIterate, StepSize};
pub use error::{Error, Result};
pub use experiment::{monte_carlo, run_trial, MonteCarloTable, RunTrace};
pub use network::{generate_rgg, metropolis_mixing, Graph, MixingMatrix};
pub use oracle::{ErrorRecord, Measurement};
pub use streaming::{StreamParams, StreamState, WeightedObjective};
pub use theory::{SchemeBound, TheoryConstants};
pub use weighting::WeightScheme;
