//! Batch experiments: a strict TOML grammar, a deterministic grid runner,
//! and CSV/SVG writers whose bytes reproduce run over run.

pub mod config;
pub mod runner;
pub mod svg;

pub use config::{
    AlgorithmSpec, DomainSpec, Experiment, ExperimentSpec, OutputSpec, ProblemSpec, ResolvedRule,
    SeedSpec, StepRuleSpec,
};
pub use runner::{run_experiment, ExperimentOutputs};
