//! Aggregate stable matching with money burning in two-sided markets with
//! fixed prices.
//!
//! Passengers of type `x` and taxis of type `y` match at fixed prices; excess
//! demand on a market segment is cleared by waiting time, which one side of
//! the segment burns. The crate provides
//!
//! * deterministic stability checks and conversions between type-level and
//!   individual-level matchings ([`deterministic`]),
//! * discrete-choice demand with logit or general i.i.d. shocks ([`demand`]),
//! * the equilibrium solvers for random utility ([`equilibrium`]),
//! * capacity-constrained choice ([`constrained`]) and the generalized
//!   deferred acceptance algorithm built on it ([`da`]),
//! * a fluid queueing simulation whose steady state is the equilibrium
//!   ([`queue`]).

pub mod constrained;
pub mod da;
pub mod demand;
pub mod deterministic;
pub mod equilibrium;
pub mod generate;
pub mod error;
pub mod io;
pub mod model;
pub mod queue;
pub mod suite;

mod logit;
mod scalar;

pub use error::{Error, Result};
pub use model::{
    DeterministicOutcome, Diagnostics, EquilibriumOutcome, IndividualMarket, IndividualMatching,
    MarketSpec, Matching, Side, WaitMatrix,
};
