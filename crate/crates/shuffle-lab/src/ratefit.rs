//! Log-log rate estimation and crossover detection.
//!
//! Convergence claims in this crate are statements about exponents: error
//! behaving like T^p shows up as a line of slope p in log-log coordinates.
//! The fit here is ordinary least squares on (ln T, ln error), with a
//! parametric bootstrap for the slope's confidence interval.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Mean error (with its standard error) at one oracle budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub t: usize,
    pub mean_error: f64,
    pub stderr: f64,
}

/// A fitted power law: error is approximately exp(intercept) * T^exponent.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    /// Coefficient of determination in log-log space, clamped to [0, 1].
    pub r_squared: f64,
    /// Half the width of the central 90% bootstrap interval for the
    /// exponent; NaN when no resampling was requested.
    pub ci_halfwidth: f64,
    pub n_points: usize,
}

fn validate_points(points: &[RatePoint]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "a slope from {} points is not evidence; need at least 3",
            points.len()
        )));
    }
    for w in points.windows(2) {
        if w[1].t <= w[0].t {
            return Err(Error::invalid("budgets must be strictly increasing"));
        }
    }
    for p in points {
        if p.t == 0 {
            return Err(Error::invalid("budgets must be positive"));
        }
        if !(p.mean_error > 0.0) || !p.mean_error.is_finite() {
            return Err(Error::invalid(format!(
                "mean error at T = {} is {}; log-log fits need positive finite errors",
                p.t, p.mean_error
            )));
        }
        if !(p.stderr >= 0.0) || !p.stderr.is_finite() {
            return Err(Error::invalid(format!(
                "standard error at T = {} is {}",
                p.t, p.stderr
            )));
        }
    }
    Ok(())
}

/// Least squares of ln(error) on ln(T). Returns (slope, intercept, r^2).
fn ols_loglog(ts: &[f64], errors: &[f64]) -> (f64, f64, f64) {
    let k = ts.len() as f64;
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / k;
    let y_bar = ys.iter().sum::<f64>() / k;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - x_bar) * (x - x_bar);
        sxy += (x - x_bar) * (y - y_bar);
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let fitted = intercept + slope * x;
        sse += (y - fitted) * (y - fitted);
        sst += (y - y_bar) * (y - y_bar);
    }
    let r_squared = if sst > 0.0 {
        (1.0 - sse / sst).clamp(0.0, 1.0)
    } else {
        // A perfectly flat cloud is fitted perfectly by a flat line.
        1.0
    };
    (slope, intercept, r_squared)
}

/// Quantile by linear interpolation of the order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Fits a power law to the points and bootstraps the exponent.
///
/// The bootstrap is parametric: each replicate redraws every point from
/// Normal(mean, stderr), rejecting non-positive draws, and refits. The
/// reported half-width spans the central 90% of replicate slopes.
pub fn estimate_rate(points: &[RatePoint], bootstrap_reps: usize, seed: u64) -> Result<RateFit> {
    validate_points(points)?;
    let ts: Vec<f64> = points.iter().map(|p| p.t as f64).collect();
    let means: Vec<f64> = points.iter().map(|p| p.mean_error).collect();
    let (exponent, intercept, r_squared) = ols_loglog(&ts, &means);

    let ci_halfwidth = if bootstrap_reps == 0 {
        f64::NAN
    } else {
        let samplers: Vec<Normal<f64>> = points
            .iter()
            .map(|p| {
                Normal::new(p.mean_error, p.stderr)
                    .map_err(|e| Error::invalid(format!("bootstrap sampler: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut slopes = Vec::with_capacity(bootstrap_reps);
        let mut redrawn = vec![0.0f64; points.len()];
        for rep in 0..bootstrap_reps {
            let mut rng = stream_rng(seed, 1 + rep as u64);
            for (slot, (sampler, point)) in redrawn
                .iter_mut()
                .zip(samplers.iter().zip(points))
            {
                let mut draw = sampler.sample(&mut rng);
                let mut tries = 0;
                while draw <= 0.0 {
                    tries += 1;
                    if tries > 10_000 {
                        // Rejection is hopeless when the error sits within
                        // noise of zero; pin the replicate to the mean.
                        draw = point.mean_error;
                        break;
                    }
                    draw = sampler.sample(&mut rng);
                }
                *slot = draw;
            }
            slopes.push(ols_loglog(&ts, &redrawn).0);
        }
        slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (quantile(&slopes, 0.95) - quantile(&slopes, 0.05)) / 2.0
    };

    Ok(RateFit {
        exponent,
        intercept,
        r_squared,
        ci_halfwidth,
        n_points: points.len(),
    })
}

/// The first budget from which one curve stays below another for good.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossover {
    pub t_star: usize,
    /// t_star divided by n.
    pub epochs: f64,
}

/// Finds the earliest grid index at which the shuffled curve sits strictly
/// below the sampled one there and at every later budget. A dip that later
/// reverses does not count. Both series must share the same strictly
/// increasing grid of whole passes (budgets divisible by n).
pub fn crossover_epochs(
    rs: &[RatePoint],
    sgd: &[RatePoint],
    n: usize,
) -> Result<Option<Crossover>> {
    if n == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    if rs.len() != sgd.len() || rs.is_empty() {
        return Err(Error::invalid("the two series must share one non-empty grid"));
    }
    for (a, b) in rs.iter().zip(sgd) {
        if a.t != b.t {
            return Err(Error::invalid(format!(
                "grid mismatch: {} vs {}",
                a.t, b.t
            )));
        }
        if a.t % n != 0 {
            return Err(Error::invalid(format!(
                "budget {} is not a whole number of passes over n = {n}",
                a.t
            )));
        }
        for p in [a, b] {
            if !(p.mean_error > 0.0) || !p.mean_error.is_finite() {
                return Err(Error::invalid(format!(
                    "mean error at T = {} is {}",
                    p.t, p.mean_error
                )));
            }
        }
    }
    for w in rs.windows(2) {
        if w[1].t <= w[0].t {
            return Err(Error::invalid("budgets must be strictly increasing"));
        }
    }

    let below: Vec<bool> = rs
        .iter()
        .zip(sgd)
        .map(|(a, b)| a.mean_error < b.mean_error)
        .collect();
    let mut stable_from = None;
    for i in (0..below.len()).rev() {
        if below[i] {
            stable_from = Some(i);
        } else {
            break;
        }
    }
    Ok(stable_from.map(|i| Crossover {
        t_star: rs[i].t,
        epochs: rs[i].t as f64 / n as f64,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn series(ts: &[usize], f: impl Fn(f64) -> f64, stderr: f64) -> Vec<RatePoint> {
        ts.iter()
            .map(|&t| RatePoint {
                t,
                mean_error: f(t as f64),
                stderr,
            })
            .collect()
    }

    #[test]
    fn exact_power_laws_recover_their_exponents() {
        let grid = [10usize, 20, 40, 80, 160];
        let fit = estimate_rate(&series(&grid, |t| t.powi(-2), 0.0), 50, 3).unwrap();
        assert_relative_eq!(fit.exponent, -2.0, epsilon = 1e-9);
        assert_relative_eq!(fit.intercept, 0.0, epsilon = 1e-9);
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.ci_halfwidth, 0.0);
        assert_eq!(fit.n_points, 5);

        let fit = estimate_rate(&series(&grid, |t| 5.0 / t, 0.0), 50, 3).unwrap();
        assert_relative_eq!(fit.exponent, -1.0, epsilon = 1e-9);
        assert_relative_eq!(fit.intercept, 5.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn rescaling_errors_shifts_only_the_intercept() {
        let grid = [8usize, 16, 32, 64];
        let base = series(&grid, |t| 3.0 * t.powf(-1.7), 0.0);
        let scaled = series(&grid, |t| 300.0 * t.powf(-1.7), 0.0);
        let f1 = estimate_rate(&base, 0, 0).unwrap();
        let f2 = estimate_rate(&scaled, 0, 0).unwrap();
        assert_relative_eq!(f1.exponent, f2.exponent, epsilon = 1e-12);
        assert_relative_eq!(f2.intercept - f1.intercept, 100f64.ln(), epsilon = 1e-9);
        assert!(f1.ci_halfwidth.is_nan());
    }

    #[test]
    fn noise_widens_the_interval_deterministically() {
        let grid = [10usize, 20, 40, 80];
        let noisy = series(&grid, |t| t.powi(-2), 1e-6);
        let a = estimate_rate(&noisy, 400, 7).unwrap();
        let b = estimate_rate(&noisy, 400, 7).unwrap();
        assert!(a.ci_halfwidth > 0.0);
        assert_eq!(a.ci_halfwidth.to_bits(), b.ci_halfwidth.to_bits());
        // More noise, wider interval.
        let noisier = series(&grid, |t| t.powi(-2), 1e-5);
        let c = estimate_rate(&noisier, 400, 7).unwrap();
        assert!(c.ci_halfwidth > a.ci_halfwidth);
    }

    #[test]
    fn fits_reject_unusable_input() {
        let grid = [10usize, 20];
        assert!(estimate_rate(&series(&grid, |t| 1.0 / t, 0.0), 0, 0).is_err());
        let mut pts = series(&[10, 20, 40], |t| 1.0 / t, 0.0);
        pts[1].mean_error = 0.0;
        assert!(estimate_rate(&pts, 0, 0).is_err());
        let mut pts = series(&[10, 20, 40], |t| 1.0 / t, 0.0);
        pts[2].t = 20;
        assert!(estimate_rate(&pts, 0, 0).is_err());
        let mut pts = series(&[10, 20, 40], |t| 1.0 / t, 0.0);
        pts[0].stderr = f64::NAN;
        assert!(estimate_rate(&pts, 0, 0).is_err());
    }

    #[test]
    fn crossover_finds_the_stable_point() {
        let grid = [10usize, 20, 40, 80, 160];
        let sgd = series(&grid, |t| 1.0 / t, 0.0);
        let rs = series(&grid, |t| 1.0 / (t * t) + 1000.0 / (t * t * t), 0.0);
        let c = crossover_epochs(&rs, &sgd, 10).unwrap().unwrap();
        assert_eq!(c.t_star, 40);
        assert_relative_eq!(c.epochs, 4.0);
    }

    #[test]
    fn a_dip_that_reverses_is_not_a_crossover() {
        let grid = [10usize, 20, 40];
        let sgd = series(&grid, |_| 0.05, 0.0);
        let mut rs = series(&grid, |_| 0.01, 0.0);
        rs[1].mean_error = 10.0;
        let c = crossover_epochs(&rs, &sgd, 10).unwrap().unwrap();
        assert_eq!(c.t_star, 40);

        // Never stably below: no crossover.
        let always_above = series(&grid, |_| 1.0, 0.0);
        assert_eq!(crossover_epochs(&always_above, &sgd, 10).unwrap(), None);
    }

    #[test]
    fn crossover_rejects_mismatched_grids() {
        let a = series(&[10, 20, 40], |t| 1.0 / t, 0.0);
        let b = series(&[10, 20, 80], |t| 1.0 / t, 0.0);
        assert!(crossover_epochs(&a, &b, 10).is_err());
        let c = series(&[10, 20], |t| 1.0 / t, 0.0);
        assert!(crossover_epochs(&a, &c, 10).is_err());
        // Budgets must be whole passes.
        assert!(crossover_epochs(&a, &a.clone(), 3).is_err());
    }
}
