//! Dual-feasible conic bounds for the second-order cone (SOC) relaxation
//! of AC optimal power flow.
//!
//! The crate evaluates the SOC relaxation and its conic dual as pure
//! functions, recovers fully dual-feasible solutions from a small set of
//! independent dual variables in closed form, and trains a self-supervised
//! neural proxy that emits such solutions in one forward pass. Because every
//! recovered solution satisfies the dual constraints exactly, every bound
//! this crate reports is a valid lower bound on the SOC relaxation and
//! therefore on the nonconvex AC problem itself.
//!
//! Module map:
//! - [`grid`]: MATPOWER-style case parsing into a validated per-unit model,
//!   plus the real branch-flow coefficients used by the lifted formulation.
//! - [`soc`]: objective and per-constraint residual evaluation for the
//!   primal relaxation and its dual, gap metrics.
//! - [`completion`]: closed-form recovery of all dependent dual variables
//!   from the independent subset, in both flow-dual conventions and both
//!   omega representations.
//! - [`autodiff`]: a minimal reverse-mode tape over f64 vectors, used to
//!   differentiate the bound through the completion.
//! - [`graph`]: tape builders for the completion and dual objective.
//! - [`proxy`]: the trunk-plus-heads network emitting independent variables.
//! - [`sampler`]: load-perturbation instance generation and dataset splits.
//! - [`trainer`]: self-supervised Adam training, a projected dual-ascent
//!   baseline, and evaluation reports.
//! - [`certify`]: repair of external dual vectors to exact feasibility.
//! - [`cli`]: the command-line entry point used by the `dcp` binary.
//!
//! All data structures are plain owned values without interior mutability;
//! evaluation functions are stateless, so callers may share cases and
//! parameters across threads freely.

pub mod autodiff;
pub mod certify;
pub mod cli;
pub mod completion;
pub mod graph;
pub mod grid;
pub mod io;
pub mod proxy;
pub mod sampler;
pub mod selftest;
pub mod soc;
pub mod trainer;

mod error;

pub use error::Error;

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Version string embedded in every JSON artifact.
pub const VERSION: &str = concat!("dcp-", env!("CARGO_PKG_VERSION"));

/// Text of the bundled 14-bus case, used by `selftest` and the examples.
pub const CASE14_TEXT: &str = include_str!("../cases/case14.m");

/// Text of the committed 14-bus reference fixture (`fixtures/case14.json`).
pub const CASE14_FIXTURE_TEXT: &str = include_str!("../fixtures/case14_fixture.json");
