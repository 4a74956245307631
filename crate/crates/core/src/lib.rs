//! Reordering of Monte Carlo sample pools so that propagated prefixes match
//! the pool's empirical distribution early.
//!
//! The pieces, bottom up:
//!
//! - [`sample`]: pools, sorted views, priors.
//! - [`state`]: the picked / remaining bookkeeping.
//! - [`wasserstein`]: exact 1-D W1 kernels and candidate scoring.
//! - [`selection`]: greedy, batch and random policies and the replicate
//!   harness.
//! - [`phasefield`]: a Cahn-Hilliard demonstration model.
//! - [`evaluation`]: propagation through a model and output-space curves.
//! - [`io`] and [`cli`]: file formats and the command-line front end.

pub mod cli;
pub mod evaluation;
pub mod io;
pub mod phasefield;
pub mod rng;
pub mod sample;
pub mod selection;
pub mod state;
pub mod stats;
pub mod wasserstein;

pub use rng::RandomStream;
pub use sample::{generate_pool, Prior, PriorSpec, SamplePool};
pub use selection::{
    batch_reorder, greedy_reorder, random_reorder, replicate_harness, BatchConfig, ConvergenceReport, DrawMode,
    PolicySpec, SelectionTrace,
};
pub use state::SelectionState;
pub use wasserstein::{eval_batch, eval_candidate, w1_sorted, wass_vector, Objective, WassersteinVector};
