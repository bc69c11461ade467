use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use shuffle_lab::analysis::{
    brute_force_rs_expectation, check_epoch_recursion, closed_form_expected_error,
    lower_bound_sweep,
};
use shuffle_lab::harness::{run_experiment, ExperimentSpec, ResolvedRule};
use shuffle_lab::optimizers::{run_optimizer, theorem_step_size, Algorithm, OptimizerConfig};
use shuffle_lab::problems::{make_lower_bound_instance, LowerBoundInstance};
use shuffle_lab::ratefit::{estimate_rate, RatePoint};

#[derive(Parser)]
#[command(
    name = "shuffle-lab",
    version,
    about = "Finite-sum gradient methods: experiments, exact oracles, and rate fits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML experiment file and write runs/summary/rates CSVs.
    Run {
        /// Path to the experiment description.
        spec: PathBuf,
    },
    /// Check the closed-form expected one-pass error against exhaustive
    /// enumeration and a Monte-Carlo simulation on the canonical
    /// alternating-sign instance (eigenvalues 1,2,3; unit shifts; unit
    /// start offsets).
    OracleCheck {
        /// Number of components (even).
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Step size for the pass.
        #[arg(long)]
        gamma: f64,
        /// Monte-Carlo replicates.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Base seed for the replicates.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte-Carlo check of the per-pass error recursion on the problem an
    /// experiment file describes (uses its random_shuffle step rule at the
    /// largest budget on the grid).
    RecursionCheck {
        /// Path to the experiment description.
        spec: PathBuf,
        /// Replicates per pass.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Passes to follow along the reference trajectory.
        #[arg(long, default_value_t = 3)]
        epochs: usize,
    },
    /// Evaluate T * E||x_T - x*||^2 over a list of step sizes on the
    /// canonical alternating-sign instance.
    LowerBoundSweep {
        /// Number of components (even).
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
    },
    /// Fit log-log rates to an existing summary.csv.
    Rate {
        /// Path to a summary.csv produced by `run`.
        #[arg(long)]
        input: PathBuf,
        /// Optional path for a rates.csv with the fits.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seed for the bootstrap.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Shared fixture: eigenvalues 1, 2, 3 with unit shifts and unit offsets.
fn canonical_instance(n: usize) -> shuffle_lab::Result<LowerBoundInstance> {
    make_lower_bound_instance(n, vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0])
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { spec } => cmd_run(&spec),
        Command::OracleCheck {
            n,
            gamma,
            samples,
            seed,
        } => cmd_oracle_check(n, gamma, samples, seed),
        Command::RecursionCheck {
            spec,
            samples,
            epochs,
        } => cmd_recursion_check(&spec, samples, epochs),
        Command::LowerBoundSweep { n, gammas } => cmd_sweep(n, &gammas),
        Command::Rate {
            input,
            output,
            seed,
        } => cmd_rate(&input, output.as_deref(), seed),
    }
}

fn cmd_run(spec_path: &std::path::Path) -> anyhow::Result<()> {
    let spec = ExperimentSpec::load(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let exp = spec.build().context("validating the experiment")?;
    println!(
        "problem: {} components in {} dimensions; mu = {:.6e}, L = {:.6e}, kappa = {:.3}",
        exp.problem.n(),
        exp.problem.dim(),
        exp.constants.mu,
        exp.constants.l,
        exp.constants.kappa
    );
    let out = run_experiment(&exp).context("running the experiment")?;
    for note in &out.notes {
        println!("note: {note}");
    }
    println!("wrote {}", out.runs_csv.display());
    println!("wrote {}", out.summary_csv.display());
    println!("wrote {}", out.rates_csv.display());
    if let Some(svg) = &out.plot_svg {
        println!("wrote {}", svg.display());
    }
    Ok(())
}

fn cmd_oracle_check(n: usize, gamma: f64, samples: usize, seed: u64) -> anyhow::Result<()> {
    if samples == 0 {
        bail!("need at least one Monte-Carlo replicate");
    }
    let inst = canonical_instance(n)?;
    let problem = inst.problem();
    let x0 = inst.x0();
    let closed = closed_form_expected_error(&inst, gamma, n)?;
    println!(
        "closed form: E||x_T - x*||^2 = {:.12e} (bias {:.6e}, variance {:.6e})",
        closed.expected_sq_error, closed.bias_sq, closed.variance
    );

    let mut pass = true;
    if n <= 6 {
        let brute = brute_force_rs_expectation(&problem, gamma, 1, &x0)?;
        let diff = (brute - closed.expected_sq_error).abs();
        let tol = 1e-10 * closed.expected_sq_error.abs().max(1.0);
        println!("enumeration over all {n}! orders: {brute:.12e} (|diff| = {diff:.3e})");
        let ok = diff <= tol;
        println!("{}: enumeration vs closed form within {tol:.1e}", verdict(ok));
        pass &= ok;
    } else {
        println!("enumeration skipped: n = {n} exceeds the exhaustive cap of 6");
    }

    let errors: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|rep| {
            let record = run_optimizer(
                &problem,
                &OptimizerConfig {
                    algorithm: Algorithm::RandomShuffle,
                    gamma,
                    total_calls: n,
                    seed,
                    stream: rep as u64,
                    x0: x0.clone(),
                    record_every: None,
                    domain_radius: None,
                },
            )?;
            Ok(record.final_sq_dist())
        })
        .collect::<shuffle_lab::Result<_>>()?;
    let k = samples as f64;
    let mean = errors.iter().sum::<f64>() / k;
    let se = if samples > 1 {
        (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    let z = if se > 0.0 {
        (mean - closed.expected_sq_error).abs() / se
    } else {
        0.0
    };
    println!("simulation ({samples} passes): {mean:.12e} +- {se:.3e} (z = {z:.2})");
    let ok = if se > 0.0 {
        z <= 4.0
    } else {
        (mean - closed.expected_sq_error).abs() <= 1e-10
    };
    println!("{}: simulation within four standard errors", verdict(ok));
    pass &= ok;

    if !pass {
        bail!("oracle check failed");
    }
    Ok(())
}

fn cmd_recursion_check(
    spec_path: &std::path::Path,
    samples: usize,
    epochs: usize,
) -> anyhow::Result<()> {
    let spec = ExperimentSpec::load(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let exp = spec.build().context("validating the experiment")?;
    let rule = exp
        .algorithms
        .iter()
        .find(|(k, _)| *k == Algorithm::RandomShuffle)
        .map(|(_, r)| *r)
        .context("the experiment has no random_shuffle entry to take a step rule from")?;
    let t_max = *exp.t_grid.last().expect("validated grid is non-empty");
    let gamma = match rule {
        ResolvedRule::Fixed(g) => g,
        ResolvedRule::Named(named) => {
            let rep = theorem_step_size(named, t_max, exp.problem.n(), &exp.constants)?;
            println!(
                "{named} at T = {t_max}: gamma = {:.6e}; precondition {} ({})",
                rep.gamma,
                if rep.precondition.satisfied { "satisfied" } else { "NOT satisfied" },
                rep.precondition.detail
            );
            rep.gamma
        }
    };

    let report = check_epoch_recursion(&exp.problem, &exp.constants, gamma, epochs, samples, exp.master_seed)?;
    std::fs::create_dir_all(&exp.out_dir)
        .with_context(|| format!("creating {}", exp.out_dir.display()))?;
    let csv_path = exp.out_dir.join("recursion.csv");
    report
        .write_csv(&csv_path)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    println!(
        "constants: C1 = {:.6e}, C2 = {:.6e}, C3 = {:.6e}; contraction = {:.6e}",
        report.c1, report.c2, report.c3, report.contraction
    );
    println!(
        "step-size precondition {}: {}",
        if report.precondition_ok { "holds" } else { "FAILS" },
        report.precondition_detail
    );
    for row in &report.rows {
        let margin = if row.lhs_stderr > 0.0 {
            format!("{:.1} SE", (row.rhs - row.lhs_mean) / row.lhs_stderr)
        } else {
            "exact".to_string()
        };
        println!(
            "pass {}: start {:.6e} -> measured {:.6e} +- {:.2e}, bound {:.6e} (margin {margin}) {}",
            row.epoch,
            row.start_sq,
            row.lhs_mean,
            row.lhs_stderr,
            row.rhs,
            verdict(row.satisfied)
        );
    }
    println!("wrote {}", csv_path.display());
    if report.any_violation {
        bail!("the measured pass error exceeded its bound");
    }
    Ok(())
}

fn cmd_sweep(n: usize, gammas: &[f64]) -> anyhow::Result<()> {
    let inst = canonical_instance(n)?;
    let report = lower_bound_sweep(&inst, gammas)?;
    println!("T = n = {}; columns: gamma, E||x_T - x*||^2, T * E", report.t);
    for row in &report.rows {
        println!(
            "{:.10e}  {:.10e}  {:.10e}",
            row.gamma, row.expected_sq_error, row.scaled
        );
    }
    println!(
        "minimum of T * E: {:.10e} at gamma = {:.10e}",
        report.min_scaled, report.argmin_gamma
    );
    Ok(())
}

fn cmd_rate(
    input: &std::path::Path,
    output: Option<&std::path::Path>,
    seed: u64,
) -> anyhow::Result<()> {
    let mut reader = csv::Reader::from_path(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let headers = reader.headers()?.clone();
    let idx = |name: &str| -> anyhow::Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} lacks a '{name}' column", input.display()))
    };
    let (ai, ti, mi, si) = (
        idx("algorithm")?,
        idx("T")?,
        idx("mean_sq_error")?,
        idx("stderr")?,
    );

    // Group points per algorithm in order of first appearance.
    let mut groups: Vec<(String, Vec<RatePoint>)> = Vec::new();
    for row in reader.records() {
        let row = row?;
        let mean_field = &row[mi];
        if mean_field.is_empty() {
            continue;
        }
        let point = RatePoint {
            t: row[ti].parse().context("parsing T")?,
            mean_error: mean_field.parse().context("parsing mean_sq_error")?,
            stderr: row[si].parse().context("parsing stderr")?,
        };
        if !(point.mean_error > 0.0) {
            continue;
        }
        let name = row[ai].to_string();
        match groups.iter_mut().find(|(g, _)| *g == name) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((name, vec![point])),
        }
    }
    if groups.is_empty() {
        bail!("{} has no usable rows", input.display());
    }

    let mut fitted = Vec::new();
    for (name, points) in &groups {
        if points.len() < 3 {
            println!("{name}: skipped ({} usable budgets, need 3)", points.len());
            continue;
        }
        let fit = estimate_rate(points, 1000, seed)?;
        println!(
            "{name}: exponent {:.4} +- {:.4} (90% CI), r^2 = {:.4}, {} points",
            fit.exponent, fit.ci_halfwidth, fit.r_squared, fit.n_points
        );
        fitted.push((name.clone(), fit));
    }
    if fitted.is_empty() {
        bail!("no algorithm had enough budgets to fit");
    }

    if let Some(path) = output {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "algorithm",
            "exponent",
            "intercept",
            "r_squared",
            "ci_halfwidth",
            "n_points",
        ])?;
        for (name, fit) in &fitted {
            w.write_record([
                name.clone(),
                format!("{:.16e}", fit.exponent),
                format!("{:.16e}", fit.intercept),
                format!("{:.16e}", fit.r_squared),
                format!("{:.16e}", fit.ci_halfwidth),
                fit.n_points.to_string(),
            ])?;
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
