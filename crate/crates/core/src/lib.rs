//! Adaptive solver for rough differential equations via the log-ODE method.
//!
//! The crate provides:
//!
//! - a dense truncated tensor algebra with signatures of piecewise-linear
//!   driving paths ([`tensor`], [`path`]);
//! - vector-field oracles with nested forward-mode derivatives and the
//!   iterated-field contractions that define the log-ODE scheme ([`field`]);
//! - log-ODE and Euler one-step schemes over an embedded Dormand–Prince 5(4)
//!   inner integrator ([`logode`]);
//! - a computable a-posteriori representation of the global error as a
//!   weighted sum of local errors, with the weights solved by a backward
//!   dual sweep ([`error_rep`]);
//! - a cost-model-driven controller that decides, interval by interval,
//!   between grid refinement and raising the scheme degree ([`adaptive`]);
//! - the built-in example problems and report/artifact machinery behind the
//!   `logode` command-line interface ([`problems`], [`report`]).

pub mod ad;
pub mod adaptive;
pub mod error_rep;
pub mod field;
pub mod logode;
pub mod path;
pub mod problems;
pub mod report;
pub mod tensor;
