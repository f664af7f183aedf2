//! Sampling-budget allocation for sample average approximation (SAA) over a
//! finite design grid.
//!
//! The library computes large-deviations rate functions for the mis-ordering
//! of empirical means at pairs of design points, solves the concave max-min
//! program that yields the asymptotically optimal linear allocation of a
//! sampling budget, and provides two sequential algorithms that estimate the
//! optimal allocation as samples accumulate, plus an experiment harness with
//! reproducible seeding and CSV output.

pub mod alloc_opt;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod loss;
pub mod rate;
pub mod rng;
mod search;
pub mod sequential;
pub mod stats;

pub use alloc_opt::{AllocProblem, OptimizeOutcome, SolverSettings};
pub use error::{Error, Result};
pub use grid::DesignGrid;
pub use harness::{
    ldp_validate_gaussian_exact, ldp_validate_mc, q_boundary_indices, reference_allocation,
    run_experiment, ExperimentConfig, ExperimentSummary, LdpRung, Scenario,
};
pub use loss::{empirical_cgf, CgfEval, EmpiricalCgf, LossModel, ModelCgf, SampleStore};
pub use rate::{
    misorder_rate, pair_rate_binomial, pair_rate_gaussian, pair_rate_numeric, phi, q_set,
    regret_rate, Allocation, BinomialRates, GaussianRates, NumericRates, PairRateEval, QSet,
    RateResult, DEFAULT_ALPHA_FLOOR,
};
pub use sequential::{
    algo1_run, algo2_run, estimate_pair_rate_closed_form, multinomial_schedule, optimality_gap,
    Algo1Config, Algo2Config, Algo2Outcome, FrozenTRates, IterationRecord, PairFamily, RateFamily,
};
