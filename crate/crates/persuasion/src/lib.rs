//! Equilibrium analysis of persuasion against finite-memory decision
//! protocols.
//!
//! A fully informed sender feeds signals to a receiver who processes them
//! with a finite automaton ("protocol") and eventually takes a binary
//! action. The sender wants the high action regardless of the truth; the
//! receiver wants to match the state of nature. This crate solves the
//! sender's optimal stopping problem against any protocol, analyzes the
//! induced absorbing Markov chains, evaluates both players' payoffs,
//! reduces arbitrary protocols to the parsimonious two-absorbing-state
//! form without losing receiver payoff, constructs the near-optimal ladder
//! family and sweeps it against the closed-form optimal values, and reports
//! the behavioral fingerprints of near-optimal designs (entry
//! concentration, vanishing absorbing transitions, mixing ratios, bias).
//!
//! States are indexed `0..m` in the API and labeled `1..=m` in files and
//! reports. See the `book/` guide for a walk-through and the `ppl` binary
//! for the command-line surface.

// Indexed loops over small dense matrices read better here than
// iterator chains over enumerate/zip towers.
#![allow(clippy::needless_range_loop)]

pub mod best_response;
pub mod chain;
pub mod diagnostics;
pub mod family;
pub mod gen;
pub mod io;
mod linalg;
pub mod model;
pub mod payoffs;
pub mod reduction;
pub mod verify;

mod book_tests;

pub use best_response::{
    best_response, enumerate_best_response_oracle, solve_value, SenderStrategy, SolveError,
    ValueFunction,
};
pub use chain::{
    absorption, hellman_residual, induce, modified_chain, simulate, AbsorptionAnalysis, ChainError,
    InducedChain, ModifiedChain, SimOutcome,
};
pub use diagnostics::{
    absorbing_transition_mass, behavior_metrics, entry_distribution, BehaviorReport, DiagError,
    EntryDistribution,
};
pub use family::{
    build_family, figure1, figure2, figure3, geometric_grid, optimal_weight_ratio, sweep,
    FamilyError, FamilyParams, SweepResult, SweepRow,
};
pub use model::{
    classify_states, shape, validate, Environment, ModelError, PerTheta, Protocol, ProtocolShape,
    SignalModel, StateClassification, Theta, ValidationReport, Violation,
};
pub use payoffs::{
    evaluate, receiver_optimal_value, sender_limit_value, solve_relaxed, spread_ratio,
    OptimalValue, PayoffError, PayoffReport, Regime, RelaxedSolution, SpreadCheck,
};
pub use reduction::{
    lp_symmetrize, make_state_absorbing, merge_absorbing, to_parsimonious, to_simple, ReduceError,
    ReductionStep, ReductionTrace, StepKind,
};
