//! Meta-reinforcement-learning laboratory over finite MDPs.
//!
//! Samples task distributions with a variability knob, meta-trains a tabular
//! softmax policy with exact gradients, and measures generalization gaps,
//! suboptimality, concentration radii and convergence behaviour.
//!
//! Returns are exact infinite-horizon discounted values (no Monte-Carlo),
//! and the loss is always the negated return.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bounds;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod meta;
pub mod policy;
pub mod seed;
pub mod stats;
pub mod tasks;

pub use error::{Error, Result};
pub use mdp::{EvalResult, Mdp};
pub use policy::{PolicyParams, Table};
