//! A laboratory for finite-sum gradient methods.
//!
//! The objects of study are objectives F(x) = (1/n) sum of f_i(x) and the
//! incremental methods that walk them one component gradient at a time:
//! with-replacement sampling, per-pass reshuffling, a fixed cycle, and full
//! gradient descent, all charged against the same oracle-call budget. The
//! crate provides:
//!
//! - [`problems`]: constructible families with known minimizers and
//!   computed constants (curvature, smoothness, gradient caps, overlap).
//! - [`optimizers`]: the four update loops plus named step-size schedules
//!   with explicit budget preconditions.
//! - [`analysis`]: exact oracles, with closed forms for expected error
//!   where they exist and exhaustive enumeration where they don't, plus
//!   Monte-Carlo inequality checks.
//! - [`ratefit`]: log-log slope estimation with bootstrap intervals and
//!   crossover detection between error curves.
//! - [`harness`]: a TOML-driven batch runner with deterministic CSV and
//!   SVG outputs.
//!
//! # Example
//!
//! Generate a random strongly convex quadratic sum, pick the schedule
//! matched to it, and run one shuffled pass budget:
//!
//! ```
//! # fn main() -> shuffle_lab::Result<()> {
//! use shuffle_lab::optimizers::{
//!     run_optimizer, theorem_step_size, Algorithm, OptimizerConfig, StepRule,
//! };
//! use shuffle_lab::problems::{make_quadratic, problem_constants};
//!
//! let problem = make_quadratic(8, 4, 1.0, 5.0, 7)?;
//! let constants = problem_constants(&problem, 4.0)?;
//! let step = theorem_step_size(StepRule::Thm1, 512, problem.n(), &constants)?;
//!
//! let record = run_optimizer(
//!     &problem,
//!     &OptimizerConfig {
//!         algorithm: Algorithm::RandomShuffle,
//!         gamma: step.gamma,
//!         total_calls: 512,
//!         seed: 1,
//!         stream: 0,
//!         x0: problem.minimizer() + nalgebra::DVector::from_element(4, 1.0),
//!         record_every: None,
//!         domain_radius: Some(constants.radius),
//!     },
//! )?;
//! assert!(record.final_sq_dist() < 1e-2);
//! assert!(!record.exited_ball);
//! # Ok(()) }
//! ```
//!
//! Reproducibility is a design constraint throughout: every random choice
//! flows from an explicit (seed, stream) pair, and repeat runs produce
//! bit-identical trajectories and byte-identical output files.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod optimizers;
pub mod problems;
pub mod ratefit;
pub mod rng;

pub use error::{Error, Result};

// Keep the guide's code fences compiling: every chapter is attached here
// as a doc-test module.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/algorithms.md")]
    mod algorithms {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/checks.md")]
    mod checks {}
    #[doc = include_str!("../../../book/src/rates.md")]
    mod rates {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
