//! Exact and exhaustive oracles for shuffled-gradient behavior.
//!
//! The simulators in `optimizers` are stochastic; everything here is either
//! a closed form or a full enumeration, so tests can pin simulator output
//! against values that carry no sampling error of their own.

use itertools::Itertools;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::{Family, FiniteSumProblem, LowerBoundInstance, ProblemConstants};
use crate::rng::{shuffled_indices, stream_rng};

/// Compensated accumulator; keeps long averages honest.
#[derive(Debug, Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum
    }
}

/// Exact single-pass error decomposition for the alternating-sign family.
#[derive(Debug, Clone)]
pub struct ClosedFormError {
    /// E ||x_T - x*||^2 over the random permutation.
    pub expected_sq_error: f64,
    /// ||E x_T||^2 (the minimizer is the origin).
    pub bias_sq: f64,
    /// Total coordinate variance.
    pub variance: f64,
    /// E x_T, coordinate by coordinate in the shared eigenbasis.
    pub mean_iterate: DVector<f64>,
}

/// Expected squared error of one shuffled pass (T = n) on an
/// alternating-sign instance, computed exactly.
///
/// Per eigen-coordinate with curvature lambda, offset a, and shift b, the
/// mean iterate contracts through m = 1 - gamma lambda while the
/// permutation injects variance
///
/// ```text
/// gamma^2 b^2 lambda^2 [ T/(T-1) (1 - m^{2T})/(1 - m^2)
///                        - 1/(T-1) ((1 - m^T)/(gamma lambda))^2 ]
/// ```
///
/// which comes from the pairwise sign correlation of sampling without
/// replacement. Requires gamma lambda < 2 on every coordinate; at
/// gamma lambda = 0 the variance vanishes (its analytic limit).
pub fn closed_form_expected_error(
    inst: &LowerBoundInstance,
    gamma: f64,
    t: usize,
) -> Result<ClosedFormError> {
    if t != inst.n() {
        return Err(Error::invalid(format!(
            "the closed form covers exactly one pass: T must equal n = {}, got {t}",
            inst.n()
        )));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::invalid(format!(
            "step size must be finite and non-negative, got {gamma}"
        )));
    }
    let tf = t as f64;
    let mut bias_sq = KahanSum::default();
    let mut variance = KahanSum::default();
    let mut mean_iterate = DVector::zeros(inst.dim());
    for (k, (&lambda, (&a, &b))) in inst
        .eigenvalues()
        .iter()
        .zip(inst.a_coeffs().iter().zip(inst.b_coeffs().iter()))
        .enumerate()
    {
        let s = gamma * lambda;
        if s >= 2.0 {
            return Err(Error::Divergent { gamma_lambda: s });
        }
        let m = 1.0 - s;
        let mean = m.powi(t as i32) * a;
        mean_iterate[k] = mean;
        bias_sq.add(mean * mean);
        if s > 0.0 {
            let geom = (1.0 - m.powi(2 * t as i32)) / (1.0 - m * m);
            let ramp = (1.0 - m.powi(t as i32)) / s;
            let v = tf / (tf - 1.0) * geom - ramp * ramp / (tf - 1.0);
            variance.add(gamma * gamma * b * b * lambda * lambda * v);
        }
    }
    Ok(ClosedFormError {
        expected_sq_error: bias_sq.value() + variance.value(),
        bias_sq: bias_sq.value(),
        variance: variance.value(),
        mean_iterate,
    })
}

/// Averages the final squared error over every permutation sequence a
/// shuffled run could draw: all (n!)^epochs equally likely outcomes.
/// Feasible only for small cases (n <= 6 and at most 10^6 sequences).
pub fn brute_force_rs_expectation(
    problem: &FiniteSumProblem,
    gamma: f64,
    epochs: usize,
    x0: &DVector<f64>,
) -> Result<f64> {
    let n = problem.n();
    if n > 6 {
        return Err(Error::Budget(format!(
            "exhaustive enumeration is capped at n = 6, got n = {n}"
        )));
    }
    if epochs == 0 {
        return Err(Error::invalid("need at least one pass"));
    }
    if x0.len() != problem.dim() {
        return Err(Error::invalid("start point dimension mismatch"));
    }
    let n_fact: usize = (1..=n).product();
    let sequences = (n_fact as f64).powi(epochs as i32);
    if sequences > 1e6 {
        return Err(Error::Budget(format!(
            "(n!)^epochs = {sequences:.0} sequences exceeds the 10^6 cap"
        )));
    }
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();

    let mut total = KahanSum::default();
    let mut digits = vec![0usize; epochs];
    let mut grad = DVector::zeros(problem.dim());
    loop {
        let mut x = x0.clone();
        for &d in &digits {
            for &idx in &perms[d] {
                problem.gradient_into(idx, &x, &mut grad);
                x.axpy(-gamma, &grad, 1.0);
            }
        }
        total.add(problem.sq_dist(&x));

        // Odometer over epoch choices, least significant digit first.
        let mut pos = 0;
        loop {
            if pos == epochs {
                return Ok(total.value() / sequences);
            }
            digits[pos] += 1;
            if digits[pos] < n_fact {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// Exhaustive E[s_t s_u] where s_k = +1 when the component drawn at slot k
/// (0-based) has even 1-based index and -1 otherwise, under a uniform
/// permutation of a balanced sign population (n even). For t != u this
/// equals -1/(n-1): slots anti-correlate because each sign gets used up.
pub fn sign_pair_moment(n: usize, t: usize, u: usize) -> Result<f64> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid("sign populations are balanced, so n must be even"));
    }
    if n > 8 {
        return Err(Error::Budget("exhaustive sign enumeration is capped at n = 8".into()));
    }
    if t >= n || u >= n {
        return Err(Error::invalid("slot indices must lie in 0..n"));
    }
    let sign = |component: usize| if (component + 1) % 2 == 0 { 1.0 } else { -1.0 };
    let mut total = KahanSum::default();
    let mut count = 0usize;
    for perm in (0..n).permutations(n) {
        total.add(sign(perm[t]) * sign(perm[u]));
        count += 1;
    }
    Ok(total.value() / count as f64)
}

/// The value E[s_t s_u] should take for distinct slots.
pub fn expected_sign_pair_moment(n: usize) -> f64 {
    -1.0 / (n as f64 - 1.0)
}

/// The coupling term measured at the minimizer, with its a-priori bound.
#[derive(Debug, Clone)]
pub struct DeltaReport {
    /// E over ordered pairs i != j of Hessian_i(x*) grad f_j(x*).
    pub delta: DVector<f64>,
    pub norm: f64,
    /// L G / (n - 1).
    pub bound: f64,
    /// Distance to the single-sum rewriting
    /// -(1/(n-1)) E_i [Hessian_i grad f_i]; nonzero only through the
    /// rounding left in grad F(x*).
    pub identity_gap: f64,
}

/// Computes the cross-component coupling at the minimizer two ways and
/// checks it against the smoothness bound.
pub fn compute_delta(
    problem: &FiniteSumProblem,
    constants: &ProblemConstants,
) -> Result<DeltaReport> {
    let n = problem.n();
    if n < 2 {
        return Err(Error::invalid("the coupling term averages over pairs, so n >= 2"));
    }
    let x_star = problem.minimizer().clone();
    let grads: Vec<DVector<f64>> = (0..n).map(|i| problem.gradient(i, &x_star)).collect();
    let mut grad_total = DVector::zeros(problem.dim());
    for g in &grads {
        grad_total += g;
    }

    let nf = n as f64;
    let mut direct = DVector::zeros(problem.dim());
    let mut matched = DVector::zeros(problem.dim());
    for i in 0..n {
        let h = problem.hessian(i, &x_star);
        direct += &h * (&grad_total - &grads[i]);
        matched += &h * &grads[i];
    }
    direct /= nf * (nf - 1.0);
    matched /= -(nf * (nf - 1.0));

    let norm = direct.norm();
    Ok(DeltaReport {
        norm,
        bound: constants.l * constants.g / (nf - 1.0),
        identity_gap: (&direct - &matched).norm(),
        delta: direct,
    })
}

/// One epoch of the per-pass contraction check.
#[derive(Debug, Clone)]
pub struct RecursionRow {
    pub epoch: usize,
    /// Squared error at the epoch's start on the reference trajectory.
    pub start_sq: f64,
    /// Monte-Carlo estimate of the expected squared error one pass later.
    pub lhs_mean: f64,
    pub lhs_stderr: f64,
    /// Contraction of `start_sq` plus the step-size-cubed noise terms.
    pub rhs: f64,
    /// lhs_mean <= rhs + 3 stderr.
    pub satisfied: bool,
}

/// Outcome of `check_epoch_recursion`.
#[derive(Debug, Clone)]
pub struct RecursionReport {
    pub rows: Vec<RecursionRow>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Per-pass contraction factor 1 - n gamma L mu / (L + mu).
    pub contraction: f64,
    /// Step size small enough for the contraction argument.
    pub precondition_ok: bool,
    pub precondition_detail: String,
    pub any_violation: bool,
}

impl RecursionReport {
    /// Writes one row per pass with the constants echoed in every row, so
    /// each line stands alone. Floats carry 17 significant digits.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let fmt = |v: f64| format!("{v:.16e}");
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch",
            "start_sq_error",
            "measured_sq_error",
            "stderr",
            "bound",
            "satisfied",
            "c1",
            "c2",
            "c3",
            "contraction",
        ])?;
        for row in &self.rows {
            w.write_record([
                row.epoch.to_string(),
                fmt(row.start_sq),
                fmt(row.lhs_mean),
                fmt(row.lhs_stderr),
                fmt(row.rhs),
                row.satisfied.to_string(),
                fmt(self.c1),
                fmt(self.c2),
                fmt(self.c3),
                fmt(self.contraction),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tests the per-pass inequality
///
/// ```text
/// E ||x_{t+1} - x*||^2 <= (1 - n gamma L mu / (L + mu)) ||x_t - x*||^2
///                         + gamma^3 n C1 + gamma^5 n^5 C2 + gamma^4 n^4 C3
/// ```
///
/// with C1 = 2 L^2 G^2 / mu, C2 = 2 L^4 G^2 / mu, C3 = G^2 L^2 / 2, along a
/// reference shuffled trajectory: at each pass the left side is estimated
/// from `samples` independent single passes. A row passes when the estimate
/// stays below the bound plus three standard errors. Quadratic-family
/// objectives only; the constants assume a position-free Hessian.
pub fn check_epoch_recursion(
    problem: &FiniteSumProblem,
    constants: &ProblemConstants,
    gamma: f64,
    epochs: usize,
    samples: usize,
    seed: u64,
) -> Result<RecursionReport> {
    if problem.family() == Family::Pl {
        return Err(Error::invalid(
            "the pass-level contraction constants assume a constant Hessian; \
             use a quadratic family",
        ));
    }
    if epochs == 0 {
        return Err(Error::invalid("need at least one pass"));
    }
    if samples < 100 {
        return Err(Error::invalid(
            "fewer than 100 replicates makes the three-standard-error band meaningless",
        ));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::invalid(format!("step size must be non-negative, got {gamma}")));
    }
    let n = problem.n();
    let nf = n as f64;
    let c = constants;
    let c1 = 2.0 * c.l * c.l * c.g * c.g / c.mu;
    let c2 = 2.0 * c.l.powi(4) * c.g * c.g / c.mu;
    let c3 = 0.5 * c.g * c.g * c.l * c.l;
    let contraction = 1.0 - nf * gamma * c.l * c.mu / (c.l + c.mu);
    let noise = gamma.powi(3) * nf * c1 + gamma.powi(5) * nf.powi(5) * c2
        + gamma.powi(4) * nf.powi(4) * c3;
    let step_cap = 2.0 / (c.l + c.mu);
    let precondition_ok = gamma <= step_cap && (0.0..=1.0).contains(&contraction);
    let precondition_detail = format!(
        "gamma = {gamma:.6e} vs 2/(L + mu) = {step_cap:.6e}; contraction = {contraction:.6e}"
    );

    let one_epoch = |start: &DVector<f64>, rng: &mut rand_chacha::ChaCha8Rng| -> DVector<f64> {
        let mut x = start.clone();
        let mut grad = DVector::zeros(problem.dim());
        for &idx in &shuffled_indices(n, rng) {
            problem.gradient_into(idx, &x, &mut grad);
            x.axpy(-gamma, &grad, 1.0);
        }
        x
    };

    let mut reference_rng = stream_rng(seed, 0);
    // Start halfway to the ball's edge along the diagonal.
    let offset = c.radius / (2.0 * (problem.dim() as f64).sqrt());
    let mut x_ref = problem.minimizer() + DVector::from_element(problem.dim(), offset);
    let mut rows = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let start_sq = problem.sq_dist(&x_ref);
        let errors: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(seed, 1 + (epoch * samples + rep) as u64);
                problem.sq_dist(&one_epoch(&x_ref, &mut rng))
            })
            .collect();
        let mut sum = KahanSum::default();
        for &e in &errors {
            sum.add(e);
        }
        let mean = sum.value() / samples as f64;
        let mut sq_dev = KahanSum::default();
        for &e in &errors {
            sq_dev.add((e - mean) * (e - mean));
        }
        let stderr = if samples > 1 {
            (sq_dev.value() / (samples as f64 - 1.0)).sqrt() / (samples as f64).sqrt()
        } else {
            0.0
        };
        let rhs = contraction * start_sq + noise;
        rows.push(RecursionRow {
            epoch,
            start_sq,
            lhs_mean: mean,
            lhs_stderr: stderr,
            rhs,
            satisfied: mean <= rhs + 3.0 * stderr,
        });
        x_ref = one_epoch(&x_ref, &mut reference_rng);
    }

    let any_violation = rows.iter().any(|r| !r.satisfied);
    Ok(RecursionReport {
        rows,
        c1,
        c2,
        c3,
        contraction,
        precondition_ok,
        precondition_detail,
        any_violation,
    })
}

/// Exact final errors when all components share the minimizer.
#[derive(Debug, Clone, Copy)]
pub struct ExactErrorPair {
    pub rs: f64,
    pub sgd: f64,
}

/// For isotropic components (mu_i/2)||x - x*||^2 every run contracts the
/// error by a product of scalars, so both expectations are exact:
/// shuffling uses each factor once per pass, independent sampling averages
/// the squared factors. The arithmetic-geometric mean inequality then puts
/// the shuffled error at or below the sampled one, with equality exactly
/// when all curvatures agree.
pub fn exact_vanishing_variance_errors(
    mu_list: &[f64],
    gamma: f64,
    t: usize,
    x0_dist: f64,
) -> Result<ExactErrorPair> {
    let n = mu_list.len();
    if n == 0 {
        return Err(Error::invalid("need at least one curvature"));
    }
    if mu_list.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::invalid("curvatures must be positive and finite"));
    }
    if t == 0 || t % n != 0 {
        return Err(Error::Budget(format!(
            "budget must be a positive multiple of n = {n}, got {t}"
        )));
    }
    if !(x0_dist >= 0.0) {
        return Err(Error::invalid("squared start distance must be non-negative"));
    }
    let cap = mu_list.iter().fold(f64::INFINITY, |m, &mu| m.min(1.0 / mu));
    if !(0.0..=cap).contains(&gamma) {
        return Err(Error::invalid(format!(
            "step size must lie in [0, {cap:.6e}] so every factor contracts, got {gamma}"
        )));
    }
    let per_pass: f64 = mu_list.iter().map(|&mu| 1.0 - gamma * mu).product();
    let rs = per_pass.powi(2 * (t / n) as i32) * x0_dist;
    let mean_sq_factor: f64 =
        mu_list.iter().map(|&mu| (1.0 - gamma * mu).powi(2)).sum::<f64>() / n as f64;
    let sgd = mean_sq_factor.powi(t as i32) * x0_dist;
    Ok(ExactErrorPair { rs, sgd })
}

/// Suboptimality of the average of pass endpoints.
#[derive(Debug, Clone)]
pub struct CesaroGap {
    /// max(raw, 0).
    pub gap: f64,
    /// F(average) - F(x*) before clamping; can sit a few ulps below zero.
    pub raw: f64,
    pub mean_point: DVector<f64>,
}

/// Averages the recorded pass endpoints of a run and evaluates F there.
pub fn cesaro_gap(problem: &FiniteSumProblem, endpoints: &[DVector<f64>]) -> Result<CesaroGap> {
    if endpoints.is_empty() {
        return Err(Error::invalid(
            "no pass endpoints recorded; the run must cover at least one full pass",
        ));
    }
    let mut mean_point = DVector::zeros(problem.dim());
    for p in endpoints {
        if p.len() != problem.dim() {
            return Err(Error::invalid("endpoint dimension mismatch"));
        }
        mean_point += p;
    }
    mean_point /= endpoints.len() as f64;
    let raw = problem.gap(&mean_point);
    Ok(CesaroGap {
        gap: raw.max(0.0),
        raw,
        mean_point,
    })
}

/// One step size's outcome in a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub gamma: f64,
    pub expected_sq_error: f64,
    /// T times the expected squared error.
    pub scaled: f64,
}

/// Best-step-size landscape for one alternating-sign instance.
#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Oracle budget used by every row (one pass, T = n).
    pub t: usize,
    pub rows: Vec<SweepRow>,
    pub min_scaled: f64,
    pub argmin_gamma: f64,
}

/// Evaluates T * E ||x_T - x*||^2 across `gammas` using the closed form,
/// and reports where the minimum lands. Needs at least three distinct
/// curvatures (with fewer, a tuned step can cancel the error entirely and
/// the scaled landscape degenerates).
pub fn lower_bound_sweep(inst: &LowerBoundInstance, gammas: &[f64]) -> Result<SweepReport> {
    let mut distinct: Vec<f64> = inst.eigenvalues().to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least three distinct curvatures, got {}",
            distinct.len()
        )));
    }
    if gammas.is_empty() {
        return Err(Error::invalid("need at least one step size"));
    }
    let lambda_max = distinct.last().copied().unwrap();
    for &g in gammas {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::invalid(format!("step sizes must be non-negative, got {g}")));
        }
        if g * lambda_max >= 2.0 {
            return Err(Error::Divergent {
                gamma_lambda: g * lambda_max,
            });
        }
    }
    let t = inst.n();
    let mut rows = Vec::with_capacity(gammas.len());
    let mut best: Option<SweepRow> = None;
    for &gamma in gammas {
        let cf = closed_form_expected_error(inst, gamma, t)?;
        let row = SweepRow {
            gamma,
            expected_sq_error: cf.expected_sq_error,
            scaled: t as f64 * cf.expected_sq_error,
        };
        rows.push(row);
        if best.map_or(true, |b| row.scaled < b.scaled) {
            best = Some(row);
        }
    }
    let best = best.unwrap();
    Ok(SweepReport {
        t,
        rows,
        min_scaled: best.scaled,
        argmin_gamma: best.gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{
        make_lower_bound_instance, make_quadratic, make_vanishing_variance_problem,
        problem_constants,
    };
    use approx::assert_relative_eq;

    #[test]
    fn two_sample_pass_matches_symbolic_variance() {
        // At T = 2 the bracketed variance factor reduces to (gamma lambda)^2.
        let inst = make_lower_bound_instance(2, vec![2.0], vec![0.7])
            .unwrap()
            .with_a_coeffs(vec![1.3])
            .unwrap();
        let (gamma, lambda, a, b) = (0.3, 2.0, 1.3, 0.7);
        let cf = closed_form_expected_error(&inst, gamma, 2).unwrap();
        let m: f64 = 1.0 - gamma * lambda;
        assert_relative_eq!(cf.bias_sq, m.powi(4) * a * a, max_relative = 1e-14);
        assert_relative_eq!(
            cf.variance,
            (gamma * lambda).powi(4) * b * b,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            cf.expected_sq_error,
            cf.bias_sq + cf.variance,
            max_relative = 1e-15
        );
        assert_relative_eq!(cf.mean_iterate[0], m.powi(2) * a, max_relative = 1e-15);
    }

    #[test]
    fn zero_step_keeps_the_start_point() {
        let inst = make_lower_bound_instance(4, vec![1.0, 2.0], vec![1.0, -1.0])
            .unwrap()
            .with_a_coeffs(vec![0.5, -0.5])
            .unwrap();
        let cf = closed_form_expected_error(&inst, 0.0, 4).unwrap();
        assert_eq!(cf.variance, 0.0);
        assert_relative_eq!(cf.expected_sq_error, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn started_at_the_minimizer_with_no_shift_nothing_moves() {
        let inst = make_lower_bound_instance(2, vec![1.0, 3.0], vec![0.0, 0.0])
            .unwrap()
            .with_a_coeffs(vec![0.0, 0.0])
            .unwrap();
        let cf = closed_form_expected_error(&inst, 0.4, 2).unwrap();
        assert_eq!(cf.expected_sq_error, 0.0);
    }

    #[test]
    fn divergent_steps_are_refused() {
        let inst = make_lower_bound_instance(2, vec![4.0], vec![1.0]).unwrap();
        assert!(matches!(
            closed_form_expected_error(&inst, 0.5, 2),
            Err(Error::Divergent { .. })
        ));
        assert!(closed_form_expected_error(&inst, 0.49, 2).is_ok());
        // Only a single pass is covered.
        assert!(closed_form_expected_error(&inst, 0.1, 4).is_err());
    }

    #[test]
    fn enumeration_agrees_with_the_closed_form() {
        for (lambdas, bs, gamma) in [
            (vec![1.0, 0.5], vec![0.3, -0.2], 0.4),
            (vec![2.0, 1.0, 0.25], vec![1.0, 1.0, 1.0], 0.15),
        ] {
            let inst = make_lower_bound_instance(2, lambdas, bs).unwrap();
            let cf = closed_form_expected_error(&inst, gamma, 2).unwrap();
            let brute =
                brute_force_rs_expectation(&inst.problem(), gamma, 1, &inst.x0()).unwrap();
            assert_relative_eq!(cf.expected_sq_error, brute, max_relative = 1e-12);
        }
    }

    #[test]
    fn enumeration_guards_its_budget() {
        let p = make_quadratic(2, 1, 1.0, 2.0, 1).unwrap();
        let x0 = DVector::from_element(1, 1.0);
        assert!(brute_force_rs_expectation(&p, 0.1, 0, &x0).is_err());
        // 2^20 sequences of two permutations each exceed the cap.
        assert!(brute_force_rs_expectation(&p, 0.1, 21, &x0).is_err());
        let p7 = make_quadratic(7, 1, 1.0, 2.0, 1).unwrap();
        assert!(brute_force_rs_expectation(&p7, 0.1, 1, &x0).is_err());
    }

    #[test]
    fn sign_slots_anticorrelate_exactly() {
        for n in [2usize, 4, 6] {
            let want = expected_sign_pair_moment(n);
            assert_relative_eq!(sign_pair_moment(n, 0, 1).unwrap(), want, epsilon = 1e-12);
            if n > 2 {
                assert_relative_eq!(
                    sign_pair_moment(n, 1, n - 1).unwrap(),
                    want,
                    epsilon = 1e-12
                );
            }
            // Same slot: the square of a sign is 1.
            assert_relative_eq!(sign_pair_moment(n, 2 % n, 2 % n).unwrap(), 1.0);
        }
        assert!(sign_pair_moment(3, 0, 1).is_err());
        assert!(sign_pair_moment(4, 0, 4).is_err());
    }

    #[test]
    fn coupling_vanishes_when_gradients_do() {
        let p = make_vanishing_variance_problem(&[1.0, 2.0, 3.0], DVector::zeros(2)).unwrap();
        let c = problem_constants(&p, 1.0).unwrap();
        let rep = compute_delta(&p, &c).unwrap();
        assert_eq!(rep.norm, 0.0);
        assert_eq!(rep.identity_gap, 0.0);
    }

    #[test]
    fn coupling_cancels_for_one_alternating_pair() {
        // With n = 2 the two cross products are A(Ab) and A(-Ab).
        let inst = make_lower_bound_instance(2, vec![1.0, 2.0], vec![1.0, -0.5]).unwrap();
        let p = inst.problem();
        let c = problem_constants(&p, 1.0).unwrap();
        let rep = compute_delta(&p, &c).unwrap();
        assert!(rep.norm <= 1e-14, "norm {}", rep.norm);
        assert!(rep.bound > 0.0);
    }

    #[test]
    fn coupling_respects_its_bound_on_random_instances() {
        let p = make_quadratic(8, 4, 1.0, 5.0, 31).unwrap();
        let c = problem_constants(&p, 2.0).unwrap();
        let rep = compute_delta(&p, &c).unwrap();
        assert!(rep.norm <= rep.bound);
        assert!(rep.identity_gap <= 1e-10 * rep.bound.max(1.0));
    }

    #[test]
    fn frozen_pass_recursion_is_tight() {
        // gamma = 0: nothing moves, both sides equal the start error up to
        // the rounding of a 150-term average.
        let p = make_quadratic(4, 2, 1.0, 3.0, 2).unwrap();
        let c = problem_constants(&p, 2.0).unwrap();
        let rep = check_epoch_recursion(&p, &c, 0.0, 2, 150, 9).unwrap();
        for row in &rep.rows {
            assert_relative_eq!(row.lhs_mean, row.start_sq, max_relative = 1e-13);
            assert_eq!(row.rhs, row.start_sq);
        }
        assert_eq!(rep.contraction, 1.0);
    }

    #[test]
    fn small_step_recursion_holds_with_room() {
        let p = make_quadratic(4, 2, 1.0, 3.0, 5).unwrap();
        let c = problem_constants(&p, 2.0).unwrap();
        let gamma = 1e-3;
        let rep = check_epoch_recursion(&p, &c, gamma, 3, 200, 11).unwrap();
        assert!(rep.precondition_ok);
        assert!(!rep.any_violation, "rows: {:?}", rep.rows);
        let pl = crate::problems::make_pl_problem(2, &[1.0, -1.0]).unwrap();
        let cpl = problem_constants(&pl, 2.0).unwrap();
        assert!(check_epoch_recursion(&pl, &cpl, gamma, 1, 150, 1).is_err());
    }

    #[test]
    fn recursion_reports_round_trip_through_csv() {
        let p = make_quadratic(4, 2, 1.0, 3.0, 5).unwrap();
        let c = problem_constants(&p, 2.0).unwrap();
        let rep = check_epoch_recursion(&p, &c, 1e-3, 2, 150, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recursion.csv");
        rep.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + rep.rows.len());
        assert_eq!(
            lines[0],
            "epoch,start_sq_error,measured_sq_error,stderr,bound,satisfied,c1,c2,c3,contraction"
        );
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1].parse::<f64>().unwrap(), rep.rows[0].start_sq);
        assert_eq!(first[5], "true");
        assert_eq!(first[6].parse::<f64>().unwrap(), rep.c1);
    }

    #[test]
    fn shared_minimizer_errors_match_worked_example() {
        // mu = (1, 3), gamma = 0.1, one pass from squared distance 1:
        // shuffled (0.9 * 0.7)^2 = 0.3969, sampled ((0.81 + 0.49)/2)^2.
        let pair = exact_vanishing_variance_errors(&[1.0, 3.0], 0.1, 2, 1.0).unwrap();
        assert_relative_eq!(pair.rs, 0.3969, max_relative = 1e-12);
        assert_relative_eq!(pair.sgd, 0.4225, max_relative = 1e-12);
        assert!(pair.rs < pair.sgd);
    }

    #[test]
    fn equal_curvatures_give_equal_errors() {
        let pair = exact_vanishing_variance_errors(&[2.0, 2.0, 2.0], 0.2, 9, 4.0).unwrap();
        assert_relative_eq!(pair.rs, pair.sgd, max_relative = 1e-12);
        // Contraction cap: gamma above 1/max mu is refused.
        assert!(exact_vanishing_variance_errors(&[2.0, 4.0], 0.3, 4, 1.0).is_err());
        assert!(exact_vanishing_variance_errors(&[2.0, 4.0], 0.25, 3, 1.0).is_err());
    }

    #[test]
    fn endpoint_average_gap_is_clamped_and_reported_raw() {
        let p = make_quadratic(2, 1, 1.0, 1.0, 6).unwrap();
        let a = DVector::from_element(1, p.minimizer()[0] + 2.0);
        let b = DVector::from_element(1, p.minimizer()[0] + 4.0);
        let g = cesaro_gap(&p, &[a, b]).unwrap();
        assert_relative_eq!(g.mean_point[0], p.minimizer()[0] + 3.0, epsilon = 1e-12);
        // Identity spectrum in one dimension: F - F* = (1/2)(x - x*)^2.
        assert_relative_eq!(g.gap, 4.5, max_relative = 1e-10);
        assert!(cesaro_gap(&p, &[]).is_err());
        // Exactly at the minimizer the raw value may round below zero but
        // the clamped gap cannot.
        let g = cesaro_gap(&p, &[p.minimizer().clone()]).unwrap();
        assert!(g.gap >= 0.0);
        assert!(g.raw.abs() <= 1e-14);
    }

    #[test]
    fn sweep_scans_and_scales() {
        let inst =
            make_lower_bound_instance(6, vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]).unwrap();
        let report = lower_bound_sweep(&inst, &[0.0, 0.05, 0.1, 0.3]).unwrap();
        assert_eq!(report.t, 6);
        assert_eq!(report.rows.len(), 4);
        // gamma = 0 leaves the start error in place: T * ||x0||^2 = 6 * 3.
        assert_relative_eq!(report.rows[0].scaled, 18.0, max_relative = 1e-14);
        assert!(report.min_scaled < 18.0);
        assert!(report.argmin_gamma > 0.0);

        let two = make_lower_bound_instance(6, vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        assert!(lower_bound_sweep(&two, &[0.1]).is_err());
        assert!(matches!(
            lower_bound_sweep(&inst, &[0.7]),
            Err(Error::Divergent { .. })
        ));
    }
}
