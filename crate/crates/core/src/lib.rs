//! Budget-aware bidding and allocation planning for a demand-side platform.
//!
//! The planner dualizes campaign budget utilities, minimizes the dual by
//! subgradient descent, then fixes bids and recovers a feasible allocation
//! with a bundled simplex (or Frank-Wolfe for quadratic utilities). A
//! discrete-event simulator replays auction streams to compare the plan
//! against a greedy baseline.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auction;
pub mod dual;
pub mod error;
pub mod ext;
pub mod ingest;
pub mod instance;
pub mod lp;
pub mod recovery;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod synth;
pub mod utility;

pub use auction::{AuctionRule, BidChoice, BidLandscape, ConditionReport, WinCurve};
pub use dual::{eval_q, minimize_q, subgradient, DualEvaluation, SolveConfig, SolveResult, StepRule};
pub use error::{Error, Result};
pub use ext::ExtReal;
pub use instance::{validate, Instance, InstanceBuilder, InstanceDoc, Plan, Violation};
pub use recovery::{recover, two_phase, RecoveryConfig, RecoveryResult, RecoveryStatus, TwoPhaseOutcome};

pub use utility::UtilitySpec;
