//! Join-order enumeration by reinforcement learning over an analytic cost
//! model, with classical enumerators for comparison.
//!
//! A query's join ordering is built one join at a time by an agent that
//! repeatedly merges two trees of a forest; the finished tree is scored with
//! the C_out cost model and the agent is trained with a clipped-surrogate
//! policy gradient.

pub mod baselines;
pub mod bench;
pub mod catalog;
pub mod env;
pub mod error;
pub mod jointree;
pub mod nn;
pub mod query;
pub mod rl;

pub use error::{Error, Result};
