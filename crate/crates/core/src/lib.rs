//! Deterministic simulation of decentralized federated learning.
//!
//! Clients train locally (SGD, SAM or heavy-ball momentum), then average
//! their models with neighbors through a doubly-stochastic mixing matrix.
//! The opposite-lookahead initialization (`Ole`) pushes each client's
//! starting point away from its previous local output before training:
//!
//! ```text
//! x_{i,0} = x_i + beta * (x_i - z_i_prev)
//! ```
//!
//! which is the same as mixing with `(1 + beta) W - beta I`.
//!
//! Every run is a pure function of its configuration: client RNG streams are
//! derived from `(seed, client, round)` and reductions run in a fixed order,
//! so results do not depend on the worker count.

// Negated comparisons below deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod localopt;
pub mod metrics;
pub mod model;
pub mod param;
pub mod rng;
pub mod topology;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use param::ParamVec;
