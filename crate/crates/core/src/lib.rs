//! Variance-reduced solvers for stochastic bilevel optimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: dense primitives, spectral projections, conjugate gradients.
//! * [`oracle`]: the stochastic oracle contract for one task and the
//!   multi-task [`oracle::TaskFamily`]; [`quadratic`] is a synthetic task with
//!   closed-form ground truth.
//! * [`estimators`]: STORM, the lazily decayed randomized-coordinate bank and
//!   hypergradient assembly.
//! * [`solvers`]: SVRB (one lower problem), RSVRB (many lower problems, one
//!   sampled per step), the restarted RE-RSVRB and a two-timescale SGD
//!   baseline.
//! * [`problems`]: data reweighting, multi-task temperature scaling and the
//!   compositional reduction, plus the sparse text dataset reader.
//! * [`objective`]: deterministic evaluation of the true upper objective.
//!
//! Independent work (seeds, per-task lower solves, grid cells) is fanned out
//! through [`par`], which uses rayon when the `parallel` feature is enabled.

pub mod error;
pub mod estimators;
pub mod linalg;
pub mod objective;
pub mod oracle;
pub mod par;
pub mod problems;
pub mod quadratic;
pub mod rng;
pub mod schedule;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
pub use oracle::{BilevelTask, TaskFamily};
