//! TOML experiment descriptions and their validation.
//!
//! Parsing is strict twice over: serde rejects unknown keys, and `build`
//! rejects keys that exist in the grammar but mean nothing for the chosen
//! problem family, so a config never silently ignores a setting.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::optimizers::{Algorithm, StepRule};
use crate::problems::{
    make_lower_bound_instance, make_pl_problem, make_quadratic, make_sparse_problem,
    make_vanishing_variance_problem, problem_constants, FiniteSumProblem, ProblemConstants,
};

/// Top-level experiment file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemSpec,
    pub domain: DomainSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<usize>,
    pub seeds: SeedSpec,
    #[serde(default)]
    pub record_every: Option<usize>,
    pub outputs: OutputSpec,
}

/// The `[problem]` table. Which keys are required or forbidden depends on
/// `family`; see `build`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// One of: quadratic, sparse, lower_bound, pl, vanishing_variance.
    pub family: String,
    /// Number of components.
    pub n: usize,
    /// Ambient dimension (random families only; the others imply it).
    #[serde(default)]
    pub d: Option<usize>,
    /// Random families: `[lo, hi]` eigenvalue range. Alternating-sign
    /// family: the full list of shared-Hessian eigenvalues.
    #[serde(default)]
    pub spectrum: Option<Vec<f64>>,
    /// Sparse family: component counts per disjoint coordinate block.
    #[serde(default)]
    pub groups: Option<Vec<usize>>,
    /// Shared-minimizer family: one curvature per component.
    #[serde(default)]
    pub mu_list: Option<Vec<f64>>,
    /// Alternating-sign family: shift coordinates. Sin-squared family:
    /// per-component slopes (must sum to zero).
    #[serde(default)]
    pub b_coeffs: Option<Vec<f64>>,
    /// Generator seed (random families only).
    #[serde(default)]
    pub seed: Option<u64>,
}

/// The `[domain]` table: the ball around the minimizer that constants and
/// the exit flag refer to.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(rename = "D")]
    pub radius: f64,
}

/// One `[[algorithms]]` entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    /// sgd, random_shuffle, igd, or gd.
    pub kind: String,
    /// Either a literal step size or a named schedule (THM1, THM2, THM4,
    /// THM5, THM6).
    pub step_rule: StepRuleSpec,
}

/// A step rule is a number or a schedule name.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StepRuleSpec {
    Fixed(f64),
    Named(String),
}

/// The `[seeds]` table: replicate count and the master seed that all
/// run streams derive from.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub count: usize,
    pub master: u64,
}

/// The `[outputs]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default)]
    pub plots: bool,
}

/// A step rule after name resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedRule {
    Fixed(f64),
    Named(StepRule),
}

impl std::fmt::Display for ResolvedRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResolvedRule::Fixed(g) => write!(f, "{g}"),
            ResolvedRule::Named(r) => write!(f, "{r}"),
        }
    }
}

/// A fully validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: FiniteSumProblem,
    pub constants: ProblemConstants,
    pub x0: DVector<f64>,
    pub algorithms: Vec<(Algorithm, ResolvedRule)>,
    pub t_grid: Vec<usize>,
    pub seed_count: usize,
    pub master_seed: u64,
    pub record_every: Option<usize>,
    pub out_dir: PathBuf,
    pub plots: bool,
}

impl ExperimentSpec {
    pub fn parse_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Checks every semantic rule and materializes the problem.
    pub fn build(&self) -> Result<Experiment> {
        let p = &self.problem;
        let radius = self.domain.radius;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!(
                "domain.D must be a positive radius, got {radius}"
            )));
        }

        let forbid = |present: bool, key: &str| -> Result<()> {
            if present {
                Err(Error::config(format!(
                    "problem.{key} does not apply to family '{}'",
                    p.family
                )))
            } else {
                Ok(())
            }
        };
        let need_range_spectrum = || -> Result<(f64, f64)> {
            match p.spectrum.as_deref() {
                Some([lo, hi]) => Ok((*lo, *hi)),
                Some(other) => Err(Error::config(format!(
                    "problem.spectrum must be [lo, hi] for this family, got {} entries",
                    other.len()
                ))),
                None => Err(Error::config("problem.spectrum is required")),
            }
        };
        let need_seed = || -> Result<u64> {
            p.seed
                .ok_or_else(|| Error::config("problem.seed is required for random families"))
        };
        let need_d = || -> Result<usize> {
            p.d.ok_or_else(|| Error::config("problem.d is required for this family"))
        };

        let problem = match p.family.as_str() {
            "quadratic" => {
                forbid(p.groups.is_some(), "groups")?;
                forbid(p.mu_list.is_some(), "mu_list")?;
                forbid(p.b_coeffs.is_some(), "b_coeffs")?;
                let (lo, hi) = need_range_spectrum()?;
                make_quadratic(p.n, need_d()?, lo, hi, need_seed()?)?
            }
            "sparse" => {
                forbid(p.mu_list.is_some(), "mu_list")?;
                forbid(p.b_coeffs.is_some(), "b_coeffs")?;
                let (lo, hi) = need_range_spectrum()?;
                let groups = p
                    .groups
                    .as_deref()
                    .ok_or_else(|| Error::config("problem.groups is required for sparse"))?;
                make_sparse_problem(p.n, need_d()?, groups, lo, hi, need_seed()?)?
            }
            "lower_bound" => {
                forbid(p.d.is_some(), "d (implied by the eigenvalue list)")?;
                forbid(p.groups.is_some(), "groups")?;
                forbid(p.mu_list.is_some(), "mu_list")?;
                forbid(p.seed.is_some(), "seed (the family is deterministic)")?;
                let eigenvalues = p
                    .spectrum
                    .clone()
                    .ok_or_else(|| Error::config("problem.spectrum lists the eigenvalues"))?;
                let b_coeffs = p
                    .b_coeffs
                    .clone()
                    .ok_or_else(|| Error::config("problem.b_coeffs lists the shifts"))?;
                make_lower_bound_instance(p.n, eigenvalues, b_coeffs)?.problem()
            }
            "pl" => {
                forbid(p.d.is_some(), "d (the family is one-dimensional)")?;
                forbid(p.spectrum.is_some(), "spectrum")?;
                forbid(p.groups.is_some(), "groups")?;
                forbid(p.mu_list.is_some(), "mu_list")?;
                forbid(p.seed.is_some(), "seed (the family is deterministic)")?;
                let b_coeffs = p
                    .b_coeffs
                    .as_deref()
                    .ok_or_else(|| Error::config("problem.b_coeffs lists the slopes"))?;
                make_pl_problem(p.n, b_coeffs)?
            }
            "vanishing_variance" => {
                forbid(p.spectrum.is_some(), "spectrum")?;
                forbid(p.groups.is_some(), "groups")?;
                forbid(p.b_coeffs.is_some(), "b_coeffs")?;
                forbid(p.seed.is_some(), "seed (the family is deterministic)")?;
                let mu_list = p
                    .mu_list
                    .as_deref()
                    .ok_or_else(|| Error::config("problem.mu_list is required"))?;
                if mu_list.len() != p.n {
                    return Err(Error::config(format!(
                        "mu_list has {} entries but n = {}",
                        mu_list.len(),
                        p.n
                    )));
                }
                make_vanishing_variance_problem(mu_list, DVector::zeros(need_d()?))?
            }
            other => {
                return Err(Error::config(format!(
                    "unknown problem family '{other}' (expected quadratic, sparse, \
                     lower_bound, pl, or vanishing_variance)"
                )))
            }
        };

        if problem.n() != p.n {
            return Err(Error::config(format!(
                "constructed {} components but problem.n = {}",
                problem.n(),
                p.n
            )));
        }
        let constants = problem_constants(&problem, radius)?;

        if self.algorithms.is_empty() {
            return Err(Error::config("at least one [[algorithms]] entry is required"));
        }
        let mut algorithms = Vec::with_capacity(self.algorithms.len());
        for a in &self.algorithms {
            let kind: Algorithm = a.kind.parse()?;
            if algorithms.iter().any(|(k, _)| *k == kind) {
                return Err(Error::config(format!(
                    "algorithm '{kind}' appears twice; outputs are keyed by kind"
                )));
            }
            let rule = match &a.step_rule {
                StepRuleSpec::Fixed(g) => {
                    if !g.is_finite() || *g < 0.0 {
                        return Err(Error::config(format!(
                            "step_rule {g} must be finite and non-negative"
                        )));
                    }
                    ResolvedRule::Fixed(*g)
                }
                StepRuleSpec::Named(name) => ResolvedRule::Named(name.parse()?),
            };
            algorithms.push((kind, rule));
        }

        if self.t_grid.is_empty() {
            return Err(Error::config("T_grid must be non-empty"));
        }
        for w in self.t_grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::config("T_grid must be strictly increasing"));
            }
        }
        let named_rules = algorithms
            .iter()
            .any(|(_, r)| matches!(r, ResolvedRule::Named(_)));
        for &t in &self.t_grid {
            if t == 0 {
                return Err(Error::config("budgets must be positive"));
            }
            if named_rules && t < 2 {
                return Err(Error::config(
                    "named schedules divide by ln(T); every budget must be at least 2",
                ));
            }
            let needs_whole_passes = algorithms.iter().any(|(k, _)| {
                matches!(k, Algorithm::RandomShuffle | Algorithm::Gd)
            });
            if needs_whole_passes && t % problem.n() != 0 {
                return Err(Error::config(format!(
                    "budget {t} is not a multiple of n = {}, required by \
                     random_shuffle and gd",
                    problem.n()
                )));
            }
        }

        if self.seeds.count == 0 {
            return Err(Error::config("seeds.count must be at least 1"));
        }
        if self.record_every == Some(0) {
            return Err(Error::config("record_every must be positive when given"));
        }
        if self.outputs.dir.as_os_str().is_empty() {
            return Err(Error::config("outputs.dir must be non-empty"));
        }

        // Deterministic start: halfway to the ball's edge along the
        // all-ones diagonal.
        let d = problem.dim();
        let offset = radius / (2.0 * (d as f64).sqrt());
        let x0 = problem.minimizer() + DVector::from_element(d, offset);

        Ok(Experiment {
            problem,
            constants,
            x0,
            algorithms,
            t_grid: self.t_grid.clone(),
            seed_count: self.seeds.count,
            master_seed: self.seeds.master,
            record_every: self.record_every,
            out_dir: self.outputs.dir.clone(),
            plots: self.outputs.plots,
        })
    }
}
