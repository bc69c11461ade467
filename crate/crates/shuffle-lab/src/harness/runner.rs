//! Executes a validated experiment and writes its CSV and SVG outputs.
//!
//! Runs are laid out as a grid of cells (algorithm x budget x replicate),
//! each pinned to its own PRNG stream derived from the master seed, so the
//! whole experiment is reproducible cell by cell and file by file.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use super::config::{Experiment, ResolvedRule};
use super::svg;
use crate::error::Result;
use crate::optimizers::{run_optimizer, theorem_step_size, Algorithm, OptimizerConfig, RunRecord};
use crate::ratefit::{estimate_rate, RatePoint};

/// Bootstrap draws behind every rates.csv row.
const BOOTSTRAP_REPS: usize = 1000;
/// Fewest replicates per cell before a rate fit is considered meaningful.
const MIN_SEEDS_FOR_FIT: usize = 32;
/// Fewest budgets on the grid before a slope is worth fitting.
const MIN_POINTS_FOR_FIT: usize = 3;

/// Where everything landed, plus human-readable schedule notes.
#[derive(Debug, Clone)]
pub struct ExperimentOutputs {
    pub out_dir: PathBuf,
    pub runs_csv: PathBuf,
    pub summary_csv: PathBuf,
    /// Always written; holds only the header when no fit was eligible.
    pub rates_csv: PathBuf,
    pub plot_svg: Option<PathBuf>,
    pub notes: Vec<String>,
}

/// 17 significant digits: enough to round-trip any f64 exactly.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

struct CellResult {
    algorithm: Algorithm,
    t: usize,
    rep: usize,
    gamma: f64,
    record: RunRecord,
}

/// Runs every cell of the experiment grid and writes runs.csv,
/// summary.csv, rates.csv, and (optionally) convergence.svg into the
/// configured output directory.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentOutputs> {
    let n = exp.problem.n();
    let mut notes = Vec::new();

    // Resolve one step size per (algorithm, budget) up front so schedule
    // notes exist even for cells that later fail.
    let mut gammas = vec![vec![0.0f64; exp.t_grid.len()]; exp.algorithms.len()];
    for (ai, (alg, rule)) in exp.algorithms.iter().enumerate() {
        for (ti, &t) in exp.t_grid.iter().enumerate() {
            let gamma = match rule {
                ResolvedRule::Fixed(g) => *g,
                ResolvedRule::Named(named) => {
                    let rep = theorem_step_size(*named, t, n, &exp.constants)?;
                    notes.push(format!(
                        "{alg} {named} at T = {t}: gamma = {:.6e}; {} ({}; T/ln T = {:.3e})",
                        rep.gamma,
                        if rep.precondition.satisfied {
                            "precondition satisfied"
                        } else {
                            "precondition NOT satisfied"
                        },
                        rep.precondition.detail,
                        rep.precondition.lhs,
                    ));
                    rep.gamma
                }
            };
            gammas[ai][ti] = gamma;
        }
    }

    // One PRNG stream per cell, numbered in grid order.
    struct Cell {
        ai: usize,
        ti: usize,
        rep: usize,
        stream: u64,
    }
    let mut cells = Vec::with_capacity(exp.algorithms.len() * exp.t_grid.len() * exp.seed_count);
    for ai in 0..exp.algorithms.len() {
        for ti in 0..exp.t_grid.len() {
            for rep in 0..exp.seed_count {
                let linear = (ai * exp.t_grid.len() + ti) * exp.seed_count + rep;
                cells.push(Cell {
                    ai,
                    ti,
                    rep,
                    stream: linear as u64,
                });
            }
        }
    }

    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|cell| -> Result<CellResult> {
            let (alg, _) = exp.algorithms[cell.ai];
            let t = exp.t_grid[cell.ti];
            let gamma = gammas[cell.ai][cell.ti];
            let record = run_optimizer(
                &exp.problem,
                &OptimizerConfig {
                    algorithm: alg,
                    gamma,
                    total_calls: t,
                    seed: exp.master_seed,
                    stream: cell.stream,
                    x0: exp.x0.clone(),
                    record_every: exp.record_every,
                    domain_radius: Some(exp.constants.radius),
                },
            )?;
            Ok(CellResult {
                algorithm: alg,
                t,
                rep: cell.rep,
                gamma,
                record,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(&exp.out_dir)?;
    let runs_csv = exp.out_dir.join("runs.csv");
    let summary_csv = exp.out_dir.join("summary.csv");
    let rates_csv = exp.out_dir.join("rates.csv");

    write_runs(&runs_csv, &results, n, &exp.constants)?;

    // Per-cell summaries in grid order.
    let mut summaries: Vec<(Algorithm, usize, Option<(f64, f64)>, usize)> = Vec::new();
    for (alg, _) in &exp.algorithms {
        for &t in &exp.t_grid {
            let errors: Vec<f64> = results
                .iter()
                .filter(|r| {
                    r.algorithm == *alg
                        && r.t == t
                        && r.record.first_nonfinite.is_none()
                })
                .map(|r| r.record.final_sq_dist())
                .collect();
            let dropped = exp.seed_count - errors.len();
            if dropped > 0 {
                notes.push(format!(
                    "{alg} at T = {t}: {dropped} of {} replicates diverged and were \
                     left out of the summary",
                    exp.seed_count
                ));
            }
            let stats = if errors.is_empty() {
                None
            } else {
                let k = errors.len() as f64;
                let mean = errors.iter().sum::<f64>() / k;
                let stderr = if errors.len() > 1 {
                    let var =
                        errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (k - 1.0);
                    (var / k).sqrt()
                } else {
                    0.0
                };
                Some((mean, stderr))
            };
            summaries.push((*alg, t, stats, errors.len()));
        }
    }
    write_summary(&summary_csv, &summaries)?;

    // Rate fits, when the grid carries enough evidence.
    let mut fit_rows = Vec::new();
    if exp.seed_count < MIN_SEEDS_FOR_FIT {
        notes.push(format!(
            "rate fits skipped: {} replicates per cell, need at least {MIN_SEEDS_FOR_FIT}",
            exp.seed_count
        ));
    } else {
        // Fits resample from their own seed domain so replicate streams
        // and bootstrap streams never collide.
        let fit_seed = exp.master_seed ^ 0x9E37_79B9_7F4A_7C15;
        for (alg, _) in &exp.algorithms {
            let points: Vec<RatePoint> = summaries
                .iter()
                .filter(|(a, _, stats, _)| {
                    a == alg && stats.map_or(false, |(m, _)| m > 0.0 && m.is_finite())
                })
                .map(|(_, t, stats, _)| {
                    let (mean, stderr) = stats.unwrap();
                    RatePoint {
                        t: *t,
                        mean_error: mean,
                        stderr,
                    }
                })
                .collect();
            if points.len() < MIN_POINTS_FOR_FIT {
                notes.push(format!(
                    "rate fit skipped for {alg}: {} usable budgets, need at least \
                     {MIN_POINTS_FOR_FIT}",
                    points.len()
                ));
                continue;
            }
            let fit = estimate_rate(&points, BOOTSTRAP_REPS, fit_seed)?;
            fit_rows.push((*alg, fit));
        }
    }
    write_rates(&rates_csv, &fit_rows)?;

    let plot_svg = if exp.plots {
        let path = exp.out_dir.join("convergence.svg");
        let series: Vec<(String, Vec<(f64, f64)>)> = exp
            .algorithms
            .iter()
            .map(|(alg, _)| {
                let pts = summaries
                    .iter()
                    .filter(|(a, _, stats, _)| a == alg && stats.is_some())
                    .map(|(_, t, stats, _)| (*t as f64, stats.unwrap().0))
                    .collect();
                (alg.to_string(), pts)
            })
            .collect();
        svg::write_loglog_plot(&path, "mean squared error vs oracle calls", &series)?;
        Some(path)
    } else {
        None
    };

    Ok(ExperimentOutputs {
        out_dir: exp.out_dir.clone(),
        runs_csv,
        summary_csv,
        rates_csv,
        plot_svg,
        notes,
    })
}

fn write_runs(
    path: &PathBuf,
    results: &[CellResult],
    n: usize,
    constants: &crate::problems::ProblemConstants,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "algorithm",
        "T",
        "seed",
        "final_sq_error",
        "final_gap",
        "exited_ball",
        "max_residual_ratio",
        "error_message",
    ])?;
    for r in results {
        let rec = &r.record;
        // The residual bound scales with gamma, so the ratio only exists
        // for a moving shuffled run.
        let residual_denom =
            0.5 * (n * (n - 1)) as f64 * r.gamma * constants.g * constants.l;
        let max_ratio = if !rec.epoch_residual_norms.is_empty() && residual_denom > 0.0 {
            let worst = rec
                .epoch_residual_norms
                .iter()
                .fold(0.0f64, |m, &v| m.max(v));
            fmt_float(worst / residual_denom)
        } else {
            String::new()
        };
        let error_message = match rec.first_nonfinite {
            Some(k) => format!("nonfinite at call {k}"),
            None => String::new(),
        };
        w.write_record([
            rec.algorithm.as_str().to_string(),
            r.t.to_string(),
            r.rep.to_string(),
            fmt_float(rec.final_sq_dist()),
            fmt_float(rec.final_gap()),
            rec.exited_ball.to_string(),
            max_ratio,
            error_message,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(
    path: &PathBuf,
    summaries: &[(Algorithm, usize, Option<(f64, f64)>, usize)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "T", "mean_sq_error", "stderr", "replicates"])?;
    for (alg, t, stats, k) in summaries {
        let (mean, stderr) = match stats {
            Some((m, s)) => (fmt_float(*m), fmt_float(*s)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            alg.as_str().to_string(),
            t.to_string(),
            mean,
            stderr,
            k.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_rates(path: &PathBuf, rows: &[(Algorithm, crate::ratefit::RateFit)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "algorithm",
        "exponent",
        "intercept",
        "r_squared",
        "ci_halfwidth",
        "n_points",
    ])?;
    for (alg, fit) in rows {
        w.write_record([
            alg.as_str().to_string(),
            fmt_float(fit.exponent),
            fmt_float(fit.intercept),
            fmt_float(fit.r_squared),
            fmt_float(fit.ci_halfwidth),
            fit.n_points.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
