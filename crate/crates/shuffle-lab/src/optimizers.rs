//! Incremental-gradient loops sharing one oracle budget convention.
//!
//! Every algorithm is charged per component-gradient evaluation, so a run
//! with budget T makes exactly T oracle calls regardless of how it orders
//! them. Full-gradient descent spends n calls per step, the others one.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::problems::{FiniteSumProblem, ProblemConstants};
use crate::rng::{shuffled_indices, stream_rng};

/// How the next component index is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Independent uniform index every call.
    Sgd,
    /// Fresh uniform permutation at the start of each epoch, then one pass.
    RandomShuffle,
    /// Fixed cyclic order 0, 1, ..., n-1, repeated.
    Igd,
    /// Full gradient of F, spending n oracle calls per step.
    Gd,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::RandomShuffle => "random_shuffle",
            Algorithm::Igd => "igd",
            Algorithm::Gd => "gd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Algorithm::Sgd),
            "random_shuffle" | "rs" => Ok(Algorithm::RandomShuffle),
            "igd" => Ok(Algorithm::Igd),
            "gd" => Ok(Algorithm::Gd),
            other => Err(Error::invalid(format!(
                "unknown algorithm '{other}' (expected sgd, random_shuffle, igd, or gd)"
            ))),
        }
    }
}

/// Everything a single run needs besides the problem itself.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    /// Constant step size for the whole run.
    pub gamma: f64,
    /// Oracle budget T (component-gradient evaluations).
    pub total_calls: usize,
    /// Base seed; combined with `stream` it pins the index sequence.
    pub seed: u64,
    /// Stream id so replicate runs draw decorrelated randomness.
    pub stream: u64,
    pub x0: DVector<f64>,
    /// Extra trace points every this many calls (the start and the final
    /// call are always recorded). Full-gradient runs only have well-defined
    /// iterates at multiples of n, so strides off that lattice record
    /// nothing extra for them.
    pub record_every: Option<usize>,
    /// Radius of the trust region around the minimizer. Iterates are never
    /// projected; leaving the ball only raises a flag on the record.
    pub domain_radius: Option<f64>,
}

/// Squared distance to the minimizer and suboptimality after `call` calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub call: usize,
    pub sq_dist: f64,
    pub gap: f64,
}

/// Outcome of one run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub total_calls: usize,
    pub trace: Vec<TracePoint>,
    pub final_point: DVector<f64>,
    /// Iterate after each completed pass of n calls (the start point is not
    /// included). A trailing partial pass contributes nothing.
    pub epoch_endpoints: Vec<DVector<f64>>,
    /// Shuffled runs only: per epoch, the norm of the difference between
    /// the gradients actually applied and n times the full gradient at the
    /// epoch's start.
    pub epoch_residual_norms: Vec<f64>,
    /// Some iterate left the configured ball around the minimizer.
    pub exited_ball: bool,
    /// First call after which the iterate had a non-finite coordinate; the
    /// run stops there and the trace is truncated.
    pub first_nonfinite: Option<usize>,
}

impl RunRecord {
    /// Squared distance at the end of the run.
    pub fn final_sq_dist(&self) -> f64 {
        self.trace.last().map(|p| p.sq_dist).unwrap_or(f64::NAN)
    }

    /// Suboptimality at the end of the run.
    pub fn final_gap(&self) -> f64 {
        self.trace.last().map(|p| p.gap).unwrap_or(f64::NAN)
    }
}

/// Runs one algorithm for `cfg.total_calls` oracle calls.
pub fn run_optimizer(problem: &FiniteSumProblem, cfg: &OptimizerConfig) -> Result<RunRecord> {
    let n = problem.n();
    let t = cfg.total_calls;
    if !cfg.gamma.is_finite() || cfg.gamma < 0.0 {
        return Err(Error::invalid(format!(
            "step size must be finite and non-negative, got {}",
            cfg.gamma
        )));
    }
    if t == 0 {
        return Err(Error::Budget("oracle budget must be at least 1".into()));
    }
    if cfg.x0.len() != problem.dim() {
        return Err(Error::invalid(format!(
            "start point has dimension {}, problem has {}",
            cfg.x0.len(),
            problem.dim()
        )));
    }
    if matches!(cfg.algorithm, Algorithm::RandomShuffle | Algorithm::Gd) && t % n != 0 {
        return Err(Error::Budget(format!(
            "{} needs a budget divisible by n = {n}, got T = {t}",
            cfg.algorithm
        )));
    }
    if cfg.record_every == Some(0) {
        return Err(Error::invalid("record stride must be positive"));
    }

    let mut rng = stream_rng(cfg.seed, cfg.stream);
    let mut x = cfg.x0.clone();
    let mut grad = DVector::zeros(problem.dim());
    let mut trace = Vec::new();
    trace.push(TracePoint {
        call: 0,
        sq_dist: problem.sq_dist(&x),
        gap: problem.gap(&x),
    });

    let mut epoch_endpoints = Vec::new();
    let mut epoch_residual_norms = Vec::new();
    let mut exited_ball = false;
    let mut first_nonfinite = None;
    let shuffled = cfg.algorithm == Algorithm::RandomShuffle;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut applied_sum = DVector::zeros(problem.dim());
    let mut epoch_target = DVector::zeros(problem.dim());

    let should_record = |k: usize| {
        k == t || cfg.record_every.is_some_and(|s| k % s == 0)
    };
    let observe = |k: usize,
                       x: &DVector<f64>,
                       trace: &mut Vec<TracePoint>,
                       exited: &mut bool,
                       nonfinite: &mut Option<usize>|
     -> bool {
        let sq = problem.sq_dist(x);
        if !sq.is_finite() {
            *nonfinite = Some(k);
            trace.push(TracePoint {
                call: k,
                sq_dist: sq,
                gap: f64::NAN,
            });
            return false;
        }
        if let Some(radius) = cfg.domain_radius {
            if sq.sqrt() > radius {
                *exited = true;
            }
        }
        if should_record(k) {
            trace.push(TracePoint {
                call: k,
                sq_dist: sq,
                gap: problem.gap(x),
            });
        }
        true
    };

    if cfg.algorithm == Algorithm::Gd {
        for step in 1..=t / n {
            let g = problem.mean_gradient(&x);
            x.axpy(-cfg.gamma, &g, 1.0);
            epoch_endpoints.push(x.clone());
            if !observe(step * n, &x, &mut trace, &mut exited_ball, &mut first_nonfinite) {
                break;
            }
        }
    } else {
        for k in 1..=t {
            let pos = (k - 1) % n;
            if pos == 0 && shuffled {
                perm = shuffled_indices(n, &mut rng);
                epoch_target = problem.mean_gradient(&x) * n as f64;
                applied_sum.fill(0.0);
            }
            let idx = match cfg.algorithm {
                Algorithm::Sgd => rng.random_range(0..n),
                Algorithm::RandomShuffle => perm[pos],
                Algorithm::Igd => pos,
                Algorithm::Gd => unreachable!(),
            };
            problem.gradient_into(idx, &x, &mut grad);
            if shuffled {
                applied_sum += &grad;
            }
            x.axpy(-cfg.gamma, &grad, 1.0);
            if pos == n - 1 {
                epoch_endpoints.push(x.clone());
                if shuffled {
                    epoch_residual_norms.push((&applied_sum - &epoch_target).norm());
                }
            }
            if !observe(k, &x, &mut trace, &mut exited_ball, &mut first_nonfinite) {
                break;
            }
        }
    }

    Ok(RunRecord {
        algorithm: cfg.algorithm,
        gamma: cfg.gamma,
        total_calls: t,
        trace,
        final_point: x,
        epoch_endpoints,
        epoch_residual_norms,
        exited_ball,
        first_nonfinite,
    })
}

/// Named step-size schedules, each tied to a precondition on the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepRule {
    /// gamma = 4 ln(T) / (T mu), for shared-Hessian quadratic sums.
    Thm1,
    /// gamma = 8 ln(T) / (T mu), for strongly convex smooth sums.
    Thm2,
    /// Same schedule as `Thm2`; the sparse-overlap analysis shares it.
    Thm4,
    /// gamma = 2 ln(T) / (T mu), for gradient-dominated sums.
    Thm5,
    /// Curvature-free minimum of four budget-dependent terms.
    Thm6,
}

impl StepRule {
    pub fn as_str(self) -> &'static str {
        match self {
            StepRule::Thm1 => "THM1",
            StepRule::Thm2 => "THM2",
            StepRule::Thm4 => "THM4",
            StepRule::Thm5 => "THM5",
            StepRule::Thm6 => "THM6",
        }
    }
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "THM1" => Ok(StepRule::Thm1),
            "THM2" => Ok(StepRule::Thm2),
            "THM4" => Ok(StepRule::Thm4),
            "THM5" => Ok(StepRule::Thm5),
            "THM6" => Ok(StepRule::Thm6),
            "THM3" => Err(Error::invalid(
                "THM3 names the alternating-sign error bound, which prescribes \
                 no step size; pass a numeric step instead",
            )),
            other => Err(Error::invalid(format!(
                "unknown step rule '{other}' (expected THM1, THM2, THM4, THM5, THM6, or a number)"
            ))),
        }
    }
}

/// Whether the budget is large enough for the rule's guarantee to apply.
#[derive(Debug, Clone)]
pub struct PreconditionReport {
    /// T / ln(T).
    pub lhs: f64,
    /// The threshold it must exceed.
    pub rhs: f64,
    pub satisfied: bool,
    pub detail: String,
}

/// A schedule evaluation: the step size plus its precondition status.
#[derive(Debug, Clone)]
pub struct StepSizeReport {
    pub rule: StepRule,
    pub gamma: f64,
    pub precondition: PreconditionReport,
}

/// Evaluates `rule` for a budget of `t` calls on an n-component problem
/// with the given constants. The step size is always returned; the report
/// says whether the guarantee's budget threshold is met.
pub fn theorem_step_size(
    rule: StepRule,
    t: usize,
    n: usize,
    constants: &ProblemConstants,
) -> Result<StepSizeReport> {
    if t < 2 {
        return Err(Error::Budget(format!(
            "schedules divide by ln(T), so T must be at least 2, got {t}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    let tf = t as f64;
    let nf = n as f64;
    let log_t = tf.ln();
    let budget_ratio = tf / log_t;
    let c = constants;

    let threshold_report = |rhs: f64, detail: String| PreconditionReport {
        lhs: budget_ratio,
        rhs,
        satisfied: budget_ratio > rhs,
        detail,
    };

    let report = match rule {
        StepRule::Thm1 => {
            let rhs = 6.0 * (1.0 + c.kappa) * nf;
            StepSizeReport {
                rule,
                gamma: 4.0 * log_t / (tf * c.mu),
                precondition: threshold_report(
                    rhs,
                    format!("T/ln T > 6(1 + kappa) n = {rhs:.6e}"),
                ),
            }
        }
        StepRule::Thm2 | StepRule::Thm4 => {
            let curvature_term = 32.0 / (c.mu * c.mu)
                * (c.l_h * c.l * c.radius + 3.0 * c.l_h * c.g);
            let condition_term = 12.0 * (1.0 + c.l / c.mu);
            let big_c = curvature_term.max(condition_term);
            let rhs = big_c * nf;
            StepSizeReport {
                rule,
                gamma: 8.0 * log_t / (tf * c.mu),
                precondition: threshold_report(rhs, format!("T/ln T > C n = {rhs:.6e}")),
            }
        }
        StepRule::Thm5 => {
            let rhs = 16.0 * c.kappa * c.kappa * nf;
            StepSizeReport {
                rule,
                gamma: 2.0 * log_t / (tf * c.mu),
                precondition: threshold_report(
                    rhs,
                    format!("T/ln T > 16 kappa^2 n = {rhs:.6e}"),
                ),
            }
        }
        StepRule::Thm6 => {
            if n < 2 {
                return Err(Error::invalid(
                    "the curvature-free schedule needs n >= 2 (it bounds a \
                     cross-component coupling by L G / (n - 1))",
                ));
            }
            let coupling = c.l * c.g / (nf - 1.0);
            let d = c.radius;
            // Terms with a zero denominator impose no constraint.
            let finite_min = |acc: f64, term: f64| if term > 0.0 { acc.min(term) } else { acc };
            let denom2 = tf * nf * (coupling + c.l_h * c.l * d * d + 2.0 * c.l_h * d * c.g);
            let denom3 = tf * nf * nf * c.l * c.l * c.delta;
            let denom4 = tf * nf * nf * nf * c.l.powi(4);
            let mut gamma = 1.0 / (16.0 * nf * c.l);
            gamma = finite_min(gamma, (d / denom2).sqrt());
            gamma = finite_min(gamma, (d / denom3).cbrt());
            gamma = finite_min(gamma, (1.0 / denom4).powf(0.25));
            StepSizeReport {
                rule,
                gamma,
                precondition: PreconditionReport {
                    lhs: budget_ratio,
                    rhs: 0.0,
                    satisfied: true,
                    detail: "unconditional".into(),
                },
            }
        }
    };
    Ok(report)
}
