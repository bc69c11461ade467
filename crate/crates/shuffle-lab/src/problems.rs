//! Finite-sum objectives F(x) = (1/n) sum_i f_i(x) and their constants.
//!
//! Every family here is built to be measurable: the minimizer is known (so
//! squared distance and suboptimality are trustworthy), and the constants
//! that step-size rules consume (strong convexity, smoothness, gradient
//! bounds, sparsity overlap) are computed rather than guessed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Which constructor produced a problem. Determines how constants are
/// derived and which invariants apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Dense random quadratics with controlled spectra.
    Quadratic,
    /// Alternating-sign shifted quadratics sharing one Hessian; admits a
    /// closed-form expected error (see `analysis`).
    LowerBound,
    /// Disjoint coordinate blocks, one per group; component gradients are
    /// exactly zero off their block.
    Sparse,
    /// One-dimensional x^2 + 3 sin^2(x) + b_i x: gradient-dominated but not
    /// convex, with certified constants.
    Pl,
    /// Isotropic components (mu_i/2) ||x - x*||^2 sharing the minimizer, so
    /// gradient noise vanishes at the optimum.
    VanishingVariance,
}

/// One summand f_i. All variants expose value, gradient, and Hessian.
#[derive(Debug, Clone)]
pub enum Component {
    /// (1/2) x' A x + b' x + c with A symmetric PSD.
    Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: f64,
    },
    /// A quadratic living on an explicit coordinate subset; entries of x
    /// outside `support` never enter the arithmetic, so perturbing them
    /// leaves value and gradient bit-identical.
    BlockQuadratic {
        support: Vec<usize>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    },
    /// x^2 + 3 sin^2(x) + slope * x on the real line.
    SinSquared { slope: f64 },
    /// (strength/2) ||x - center||^2.
    ScaledDistance {
        strength: f64,
        center: DVector<f64>,
    },
}

impl Component {
    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Component::Quadratic { a, b, c } => 0.5 * (a * x).dot(x) + b.dot(x) + c,
            Component::BlockQuadratic { support, a, b } => {
                let xe = gather(x, support);
                0.5 * (a * &xe).dot(&xe) + b.dot(&xe)
            }
            Component::SinSquared { slope } => {
                let t = x[0];
                t * t + 3.0 * t.sin().powi(2) + slope * t
            }
            Component::ScaledDistance { strength, center } => {
                0.5 * strength * (x - center).norm_squared()
            }
        }
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Component::Quadratic { a, b, .. } => {
                out.gemv(1.0, a, x, 0.0);
                out.axpy(1.0, b, 1.0);
            }
            Component::BlockQuadratic { support, a, b } => {
                out.fill(0.0);
                let xe = gather(x, support);
                let ge = a * xe + b;
                for (slot, &coord) in support.iter().enumerate() {
                    out[coord] = ge[slot];
                }
            }
            Component::SinSquared { slope } => {
                let t = x[0];
                out[0] = 2.0 * t + 3.0 * (2.0 * t).sin() + slope;
            }
            Component::ScaledDistance { strength, center } => {
                out.copy_from(x);
                out.axpy(-*strength, center, *strength);
            }
        }
    }

    fn hessian(&self, x: &DVector<f64>, dim: usize) -> DMatrix<f64> {
        match self {
            Component::Quadratic { a, .. } => a.clone(),
            Component::BlockQuadratic { support, a, .. } => {
                let mut h = DMatrix::zeros(dim, dim);
                for (si, &ci) in support.iter().enumerate() {
                    for (sj, &cj) in support.iter().enumerate() {
                        h[(ci, cj)] = a[(si, sj)];
                    }
                }
                h
            }
            Component::SinSquared { .. } => {
                DMatrix::from_element(1, 1, 2.0 + 6.0 * (2.0 * x[0]).cos())
            }
            Component::ScaledDistance { strength, .. } => {
                DMatrix::from_diagonal_element(dim, dim, *strength)
            }
        }
    }

    /// Largest eigenvalue of this component's Hessian, maximized over x.
    fn smoothness(&self) -> f64 {
        match self {
            Component::Quadratic { a, .. } => spectral_norm(a),
            Component::BlockQuadratic { a, .. } => spectral_norm(a),
            // |d^2/dx^2 (x^2 + 3 sin^2 x)| = |2 + 6 cos 2x| <= 8.
            Component::SinSquared { .. } => 8.0,
            Component::ScaledDistance { strength, .. } => *strength,
        }
    }
}

fn gather(x: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    DVector::from_iterator(support.len(), support.iter().map(|&c| x[c]))
}

/// Largest absolute eigenvalue of a symmetric matrix.
fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &e| acc.max(e.abs()))
}

/// A finite sum F(x) = (1/n) sum_{i=1}^{n} f_i(x) with a known minimizer.
#[derive(Debug, Clone)]
pub struct FiniteSumProblem {
    family: Family,
    dim: usize,
    components: Vec<Component>,
    minimizer: DVector<f64>,
    minimizer_exact: bool,
    f_star: f64,
    support_sets: Option<Vec<Vec<usize>>>,
}

impl FiniteSumProblem {
    fn new(
        family: Family,
        dim: usize,
        components: Vec<Component>,
        minimizer: DVector<f64>,
        support_sets: Option<Vec<Vec<usize>>>,
    ) -> Self {
        let mut p = FiniteSumProblem {
            family,
            dim,
            components,
            minimizer,
            minimizer_exact: true,
            f_star: 0.0,
            support_sets,
        };
        p.f_star = p.mean_value(&p.minimizer.clone());
        p
    }

    /// Builds a quadratic-family problem directly from (A_i, b_i) pairs.
    /// The minimizer solves (sum A_i) x = -(sum b_i).
    pub fn from_quadratics(pairs: Vec<(DMatrix<f64>, DVector<f64>)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("at least one quadratic component required"));
        }
        let dim = pairs[0].1.len();
        for (a, b) in &pairs {
            if a.nrows() != dim || a.ncols() != dim || b.len() != dim {
                return Err(Error::invalid("all components must share one dimension"));
            }
        }
        let components: Vec<Component> = pairs
            .into_iter()
            .map(|(a, b)| Component::Quadratic { a, b, c: 0.0 })
            .collect();
        let minimizer = solve_stationary_point(&components, dim)?;
        Ok(FiniteSumProblem::new(
            Family::Quadratic,
            dim,
            components,
            minimizer,
            None,
        ))
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn minimizer(&self) -> &DVector<f64> {
        &self.minimizer
    }

    /// True when the minimizer is analytic rather than numerically located.
    /// All shipped families are analytic (random quadratics reduce to one
    /// refined linear solve).
    pub fn minimizer_is_exact(&self) -> bool {
        self.minimizer_exact
    }

    /// F at the minimizer.
    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// Coordinate support of component `i`; `0..dim` unless the problem was
    /// built with explicit blocks.
    pub fn support_sets(&self) -> Option<&[Vec<usize>]> {
        self.support_sets.as_deref()
    }

    pub fn value(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.components[i].value(x)
    }

    pub fn gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.components[i].gradient_into(x, &mut out);
        out
    }

    /// Allocation-free gradient for hot loops.
    pub fn gradient_into(&self, i: usize, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.components[i].gradient_into(x, out);
    }

    pub fn hessian(&self, i: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.components[i].hessian(x, self.dim)
    }

    /// F(x), averaging components in index order.
    pub fn mean_value(&self, x: &DVector<f64>) -> f64 {
        let sum: f64 = self.components.iter().map(|c| c.value(x)).sum();
        sum / self.n() as f64
    }

    /// grad F(x), averaging components in index order.
    pub fn mean_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim);
        let mut buf = DVector::zeros(self.dim);
        for c in &self.components {
            c.gradient_into(x, &mut buf);
            sum += &buf;
        }
        sum / self.n() as f64
    }

    /// ||x - x*||^2.
    pub fn sq_dist(&self, x: &DVector<f64>) -> f64 {
        (x - &self.minimizer).norm_squared()
    }

    /// F(x) - F(x*), unclamped.
    pub fn gap(&self, x: &DVector<f64>) -> f64 {
        self.mean_value(x) - self.f_star
    }
}

/// Solves (sum A_i) x = -(sum b_i) with one iterative-refinement pass.
fn solve_stationary_point(components: &[Component], dim: usize) -> Result<DVector<f64>> {
    let mut h_sum = DMatrix::zeros(dim, dim);
    let mut b_sum = DVector::zeros(dim);
    for c in components {
        match c {
            Component::Quadratic { a, b, .. } => {
                h_sum += a;
                b_sum += b;
            }
            _ => return Err(Error::invalid("stationary solve expects dense quadratics")),
        }
    }
    let chol = h_sum
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("summed Hessian is not positive definite"))?;
    let mut x = chol.solve(&(-&b_sum));
    // One refinement step pushes the residual to rounding level.
    let residual = &h_sum * &x + &b_sum;
    x -= chol.solve(&residual);
    Ok(x)
}

/// Draws a random orthogonal basis (QR of a Gaussian matrix, signs fixed so
/// the distribution is uniform) and eigenvalues in `[lo, hi]`, and returns
/// Q diag(lambda) Q', re-symmetrized.
fn random_psd(dim: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let r_diag: Vec<f64> = (0..dim).map(|j| qr.r()[(j, j)]).collect();
    let mut q = qr.q();
    for (j, rj) in r_diag.iter().enumerate() {
        if *rj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let eigs = DVector::from_fn(dim, |_, _| rng.random_range(lo..=hi));
    let a = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
    0.5 * (&a + a.transpose())
}

/// Random strongly convex quadratics: f_i(x) = (1/2) x' A_i x + b_i' x with
/// every A_i's spectrum inside `[lo, hi]` and b_i standard normal. The
/// average Hessian then has eigenvalues in `[lo, hi]` as well (its smallest
/// eigenvalue is at least the average of the components' smallest).
pub fn make_quadratic(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Result<FiniteSumProblem> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("need n >= 1 components and d >= 1 dimensions"));
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "spectrum bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let a = random_psd(d, lo, hi, &mut rng);
        let b = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        pairs.push((a, b));
    }
    FiniteSumProblem::from_quadratics(pairs)
}

/// The alternating-sign construction behind the closed-form error oracle:
/// a shared diagonal Hessian in its eigenbasis, with components shifted to
/// +b and -b in alternation so the mean gradient at the origin cancels
/// exactly.
#[derive(Debug, Clone)]
pub struct LowerBoundInstance {
    eigenvalues: Vec<f64>,
    b_coeffs: Vec<f64>,
    a_coeffs: Vec<f64>,
    n: usize,
}

/// f_i(x) = (1/2)(x - b)' A (x - b) for odd i, (1/2)(x + b)' A (x + b) for
/// even i (1-based), with A = diag(`eigenvalues`) and n even. The minimizer
/// is the origin. Starting offsets default to 1 in every eigendirection.
pub fn make_lower_bound_instance(
    n: usize,
    eigenvalues: Vec<f64>,
    b_coeffs: Vec<f64>,
) -> Result<LowerBoundInstance> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!(
            "alternating signs need an even n >= 2, got {n}"
        )));
    }
    if eigenvalues.is_empty() {
        return Err(Error::invalid("eigenvalue list must be non-empty"));
    }
    if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("eigenvalues must be positive and finite"));
    }
    if b_coeffs.len() != eigenvalues.len() {
        return Err(Error::invalid(format!(
            "b has {} coordinates but there are {} eigenvalues",
            b_coeffs.len(),
            eigenvalues.len()
        )));
    }
    let a_coeffs = vec![1.0; eigenvalues.len()];
    Ok(LowerBoundInstance {
        eigenvalues,
        b_coeffs,
        a_coeffs,
        n,
    })
}

impl LowerBoundInstance {
    /// Replaces the starting offset x0 - x* (coordinates in the eigenbasis).
    pub fn with_a_coeffs(mut self, a_coeffs: Vec<f64>) -> Result<Self> {
        if a_coeffs.len() != self.eigenvalues.len() {
            return Err(Error::invalid("a_coeffs length must match eigenvalues"));
        }
        self.a_coeffs = a_coeffs;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn b_coeffs(&self) -> &[f64] {
        &self.b_coeffs
    }

    pub fn a_coeffs(&self) -> &[f64] {
        &self.a_coeffs
    }

    /// The starting point implied by the offsets (the minimizer is 0).
    pub fn x0(&self) -> DVector<f64> {
        DVector::from_vec(self.a_coeffs.clone())
    }

    /// Materializes the instance as a runnable finite-sum problem.
    pub fn problem(&self) -> FiniteSumProblem {
        let d = self.dim();
        let a = DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone()));
        let b = DVector::from_vec(self.b_coeffs.clone());
        let ab = &a * &b;
        let shift_cost = 0.5 * b.dot(&ab);
        let components: Vec<Component> = (1..=self.n)
            .map(|i| {
                // (1/2)(x -+ b)' A (x -+ b) expands to a linear term of -+Ab
                // plus the constant (1/2) b'Ab.
                let sign = if i % 2 == 1 { -1.0 } else { 1.0 };
                Component::Quadratic {
                    a: a.clone(),
                    b: sign * &ab,
                    c: shift_cost,
                }
            })
            .collect();
        FiniteSumProblem::new(
            Family::LowerBound,
            d,
            components,
            DVector::zeros(d),
            None,
        )
    }
}

/// Partition of n components into groups with disjoint coordinate blocks.
/// Components in one group share a block, so the overlap count of component
/// i is exactly its group size and rho = max group size / n.
pub fn make_sparse_problem(
    n: usize,
    d: usize,
    group_sizes: &[usize],
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<FiniteSumProblem> {
    if group_sizes.is_empty() || group_sizes.iter().any(|&g| g == 0) {
        return Err(Error::invalid("group sizes must be non-empty and positive"));
    }
    if group_sizes.iter().sum::<usize>() != n {
        return Err(Error::invalid(format!(
            "group sizes sum to {}, expected n = {n}",
            group_sizes.iter().sum::<usize>()
        )));
    }
    if d < group_sizes.len() {
        return Err(Error::invalid(format!(
            "{} groups cannot get disjoint non-empty blocks in {d} dimensions",
            group_sizes.len()
        )));
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "spectrum bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let g = group_sizes.len();
    // Spread d coordinates over g contiguous blocks, remainder first.
    let base = d / g;
    let rem = d % g;
    let mut blocks: Vec<Vec<usize>> = Vec::with_capacity(g);
    let mut next = 0usize;
    for k in 0..g {
        let len = base + usize::from(k < rem);
        blocks.push((next..next + len).collect());
        next += len;
    }

    let mut rng = stream_rng(seed, 0);
    let mut components = Vec::with_capacity(n);
    let mut supports = Vec::with_capacity(n);
    let mut h_sum = DMatrix::zeros(d, d);
    let mut b_sum = DVector::zeros(d);
    for (k, &size) in group_sizes.iter().enumerate() {
        let block = &blocks[k];
        for _ in 0..size {
            let a = random_psd(block.len(), lo, hi, &mut rng);
            let b = DVector::from_fn(block.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            for (si, &ci) in block.iter().enumerate() {
                b_sum[ci] += b[si];
                for (sj, &cj) in block.iter().enumerate() {
                    h_sum[(ci, cj)] += a[(si, sj)];
                }
            }
            supports.push(block.clone());
            components.push(Component::BlockQuadratic {
                support: block.clone(),
                a,
                b,
            });
        }
    }
    let chol = h_sum
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("summed Hessian is not positive definite"))?;
    let mut minimizer = chol.solve(&(-&b_sum));
    let residual = &h_sum * &minimizer + &b_sum;
    minimizer -= chol.solve(&residual);
    Ok(FiniteSumProblem::new(
        Family::Sparse,
        d,
        components,
        minimizer,
        Some(supports),
    ))
}

/// One-dimensional components f_i(x) = x^2 + 3 sin^2(x) + b_i x with the
/// slopes summing to zero, so F(x) = x^2 + 3 sin^2(x) regardless of b.
/// F is nonnegative and vanishes only at 0, hence x* = 0 exactly.
///
/// Certified constants: |f_i''| <= 8 everywhere, the Hessian's Lipschitz
/// constant is 12 (|d^3 f /dx^3| = |12 sin 2x|), and the gradient-domination
/// constant 1/32 holds on [-10, 10] (grid-checked; the true infimum there
/// is about 0.1755).
pub fn make_pl_problem(n: usize, b_coeffs: &[f64]) -> Result<FiniteSumProblem> {
    if n == 0 || b_coeffs.len() != n {
        return Err(Error::invalid(format!(
            "need n >= 1 slopes, got n = {n} with {} slopes",
            b_coeffs.len()
        )));
    }
    if b_coeffs.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("slopes must be finite"));
    }
    let total: f64 = b_coeffs.iter().sum();
    let scale: f64 = b_coeffs.iter().map(|b| b.abs()).sum::<f64>().max(1.0);
    if total.abs() > 1e-12 * scale {
        return Err(Error::invalid(format!(
            "slopes must sum to zero (within rounding), got {total:e}"
        )));
    }
    let components = b_coeffs
        .iter()
        .map(|&slope| Component::SinSquared { slope })
        .collect();
    Ok(FiniteSumProblem::new(
        Family::Pl,
        1,
        components,
        DVector::zeros(1),
        None,
    ))
}

/// Isotropic quadratics (mu_i/2) ||x - x*||^2 all sharing the minimizer.
/// Every component gradient vanishes at x*, which makes per-step noise
/// contract along with the iterate.
pub fn make_vanishing_variance_problem(
    mu_list: &[f64],
    x_star: DVector<f64>,
) -> Result<FiniteSumProblem> {
    if mu_list.is_empty() {
        return Err(Error::invalid("need at least one curvature"));
    }
    if mu_list.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::invalid("curvatures must be positive and finite"));
    }
    if x_star.is_empty() {
        return Err(Error::invalid("minimizer must have at least one coordinate"));
    }
    let components = mu_list
        .iter()
        .map(|&strength| Component::ScaledDistance {
            strength,
            center: x_star.clone(),
        })
        .collect();
    let dim = x_star.len();
    Ok(FiniteSumProblem::new(
        Family::VanishingVariance,
        dim,
        components,
        x_star,
        None,
    ))
}

/// Constants consumed by step-size rules and inequality checks, all relative
/// to the ball of radius `radius` around the minimizer.
#[derive(Debug, Clone)]
pub struct ProblemConstants {
    /// Strong-convexity constant of F (smallest eigenvalue of the average
    /// Hessian), or the certified gradient-domination constant for the
    /// sin-squared family.
    pub mu: f64,
    /// Largest component smoothness max_i lambda_max(Hessian of f_i).
    pub l: f64,
    /// Lipschitz constant of the component Hessians (0 for quadratics).
    pub l_h: f64,
    /// Gradient cap over the ball: max_i (||grad f_i(x*)|| + L_i * radius).
    pub g: f64,
    /// `g` is an upper bound, not a supremum evaluation.
    pub g_is_bound: bool,
    /// Ball radius around the minimizer.
    pub radius: f64,
    /// Sparsity overlap fraction: max_i |{j : supports i and j intersect}| / n.
    pub rho: f64,
    /// l / mu.
    pub kappa: f64,
    /// Bound on max_i sup over the ball of ||grad F - grad f_i||.
    pub delta: f64,
    /// True when `delta` came from point sampling rather than a closed form.
    /// All shipped families admit closed forms, so this stays false.
    pub delta_is_estimate: bool,
}

/// Derives the constants for `problem` on the radius-`radius` ball.
pub fn problem_constants(problem: &FiniteSumProblem, radius: f64) -> Result<ProblemConstants> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
    }
    let n = problem.n();
    let x_star = problem.minimizer().clone();

    let (mu, l, l_h, g, delta) = if problem.family() == Family::Pl {
        let slopes: Vec<f64> = problem
            .components
            .iter()
            .map(|c| match c {
                Component::SinSquared { slope } => *slope,
                _ => unreachable!("sin-squared family holds only sin-squared components"),
            })
            .collect();
        let max_slope = slopes.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        // grad f_i - grad F = b_i exactly (slopes sum to zero), so the
        // deviation bound is exact and independent of the ball.
        (1.0 / 32.0, 8.0, 12.0, max_slope + 8.0 * radius, max_slope)
    } else {
        let hessians: Vec<DMatrix<f64>> =
            (0..n).map(|i| problem.hessian(i, &x_star)).collect();
        let mut mean_h = DMatrix::zeros(problem.dim(), problem.dim());
        for h in &hessians {
            mean_h += h;
        }
        mean_h /= n as f64;
        let mu = SymmetricEigen::new(mean_h.clone())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &e| m.min(e));
        let mut l = 0.0f64;
        let mut g = 0.0f64;
        let mut delta = 0.0f64;
        for (i, h) in hessians.iter().enumerate() {
            let l_i = problem.components[i].smoothness();
            let grad_star = problem.gradient(i, &x_star).norm();
            l = l.max(l_i);
            g = g.max(grad_star + l_i * radius);
            delta = delta.max(spectral_norm(&(h - &mean_h)) * radius + grad_star);
        }
        (mu, l, 0.0, g, delta)
    };

    if !(mu > 0.0) {
        return Err(Error::invalid(format!(
            "average curvature must be positive, got {mu}"
        )));
    }

    // Overlap fraction by brute-force pairwise intersection of supports.
    let full: Vec<usize> = (0..problem.dim()).collect();
    let support_of = |i: usize| -> &[usize] {
        problem
            .support_sets()
            .map(|s| s[i].as_slice())
            .unwrap_or(&full)
    };
    let mut max_overlap = 0usize;
    for i in 0..n {
        let overlap = (0..n)
            .filter(|&j| intersects(support_of(i), support_of(j)))
            .count();
        max_overlap = max_overlap.max(overlap);
    }
    let rho = max_overlap as f64 / n as f64;

    let constants = ProblemConstants {
        mu,
        l,
        l_h,
        g,
        g_is_bound: true,
        radius,
        rho,
        kappa: l / mu,
        delta,
        delta_is_estimate: false,
    };
    debug_assert!(constants.mu <= constants.l + 1e-12);
    debug_assert!(constants.delta <= 2.0 * constants.g + 1e-12);
    debug_assert!((1.0 / n as f64..=1.0 + 1e-15).contains(&constants.rho));
    Ok(constants)
}

/// Intersection test for sorted coordinate lists.
fn intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_1d() -> FiniteSumProblem {
        FiniteSumProblem::from_quadratics(vec![(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        )])
        .unwrap()
    }

    #[test]
    fn single_identity_quadratic_minimizes_at_zero() {
        let p = identity_1d();
        assert_eq!(p.minimizer()[0], 0.0);
        assert_eq!(p.f_star(), 0.0);
        let x = DVector::from_element(1, 2.0);
        assert_eq!(p.value(0, &x), 2.0);
        assert_eq!(p.gradient(0, &x)[0], 2.0);
    }

    #[test]
    fn generated_quadratic_is_deterministic_and_well_posed() {
        let p = make_quadratic(8, 4, 1.0, 5.0, 7).unwrap();
        let q = make_quadratic(8, 4, 1.0, 5.0, 7).unwrap();
        for i in 0..8 {
            let x = DVector::from_fn(4, |k, _| 0.3 * k as f64 - 0.5);
            assert_eq!(p.value(i, &x).to_bits(), q.value(i, &x).to_bits());
            assert_eq!(
                p.gradient(i, &x).as_slice(),
                q.gradient(i, &x).as_slice()
            );
        }
        assert_eq!(
            p.minimizer().as_slice(),
            q.minimizer().as_slice()
        );

        // Average Hessian spectrum stays inside the component range and the
        // stationary point is numerically exact.
        let mut mean_h = DMatrix::zeros(4, 4);
        for i in 0..8 {
            mean_h += p.hessian(i, p.minimizer());
        }
        mean_h /= 8.0;
        for &e in SymmetricEigen::new(mean_h).eigenvalues.iter() {
            assert!((1.0 - 1e-9..=5.0 + 1e-9).contains(&e), "eigenvalue {e}");
        }
        assert!(p.mean_gradient(p.minimizer()).norm() <= 1e-10);
    }

    #[test]
    fn component_spectra_respect_requested_range() {
        let p = make_quadratic(6, 3, 2.0, 2.0, 11).unwrap();
        // Degenerate range [2,2] forces every component Hessian to 2*I.
        for i in 0..6 {
            let h = p.hessian(i, p.minimizer());
            for r in 0..3 {
                for c in 0..3 {
                    let want = if r == c { 2.0 } else { 0.0 };
                    assert_relative_eq!(h[(r, c)], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn lower_bound_components_alternate_signs() {
        let inst = make_lower_bound_instance(2, vec![1.0], vec![1.0]).unwrap();
        let p = inst.problem();
        let at = |v: f64| DVector::from_element(1, v);
        // f_1 = (x-1)^2/2, f_2 = (x+1)^2/2.
        assert_relative_eq!(p.value(0, &at(3.0)), 2.0, epsilon = 1e-15);
        assert_relative_eq!(p.value(1, &at(3.0)), 8.0, epsilon = 1e-15);
        assert_eq!(p.minimizer()[0], 0.0);
        // The +-b linear terms cancel exactly at the origin.
        assert_eq!(p.mean_gradient(&at(0.0))[0], 0.0);
        assert_eq!(p.f_star(), p.mean_value(&at(0.0)));
    }

    #[test]
    fn lower_bound_rejects_odd_or_empty() {
        assert!(make_lower_bound_instance(3, vec![1.0], vec![1.0]).is_err());
        assert!(make_lower_bound_instance(2, vec![], vec![]).is_err());
        assert!(make_lower_bound_instance(2, vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(make_lower_bound_instance(2, vec![-1.0], vec![1.0]).is_err());
    }

    #[test]
    fn lower_bound_constants_from_supplied_eigenvalues() {
        let inst =
            make_lower_bound_instance(4, vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]).unwrap();
        let c = problem_constants(&inst.problem(), 1.0).unwrap();
        assert_relative_eq!(c.mu, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.l, 3.0, epsilon = 1e-12);
        assert_relative_eq!(c.kappa, 3.0, epsilon = 1e-12);
        assert_eq!(c.l_h, 0.0);
    }

    #[test]
    fn sparse_overlap_fraction_matches_group_structure() {
        let p = make_sparse_problem(8, 8, &[2, 2, 2, 2], 1.0, 2.0, 5).unwrap();
        let c = problem_constants(&p, 1.0).unwrap();
        assert_relative_eq!(c.rho, 0.25, epsilon = 1e-15);

        let p = make_sparse_problem(8, 8, &[1; 8], 1.0, 2.0, 5).unwrap();
        assert_relative_eq!(problem_constants(&p, 1.0).unwrap().rho, 0.125);

        let p = make_sparse_problem(8, 8, &[8], 1.0, 2.0, 5).unwrap();
        assert_relative_eq!(problem_constants(&p, 1.0).unwrap().rho, 1.0);
    }

    #[test]
    fn sparse_components_ignore_foreign_coordinates_bitwise() {
        let p = make_sparse_problem(6, 9, &[3, 2, 1], 1.0, 3.0, 13).unwrap();
        let supports = p.support_sets().unwrap().to_vec();
        let x = DVector::from_fn(9, |k, _| (k as f64).sin());
        for i in 0..6 {
            let mut y = x.clone();
            for k in 0..9 {
                if !supports[i].contains(&k) {
                    y[k] += 1e3;
                }
            }
            assert_eq!(p.value(i, &x).to_bits(), p.value(i, &y).to_bits());
            let (gx, gy) = (p.gradient(i, &x), p.gradient(i, &y));
            for k in 0..9 {
                assert_eq!(gx[k].to_bits(), gy[k].to_bits());
                if !supports[i].contains(&k) {
                    assert_eq!(gx[k], 0.0);
                }
            }
        }
    }

    #[test]
    fn sparse_rejects_bad_partitions() {
        assert!(make_sparse_problem(8, 3, &[1; 8], 1.0, 2.0, 0).is_err());
        assert!(make_sparse_problem(8, 8, &[3, 3], 1.0, 2.0, 0).is_err());
        assert!(make_sparse_problem(8, 8, &[4, 0, 4], 1.0, 2.0, 0).is_err());
    }

    #[test]
    fn pl_mean_objective_drops_the_slopes() {
        let p = make_pl_problem(4, &[1.0, -1.0, 2.0, -2.0]).unwrap();
        assert_eq!(p.minimizer()[0], 0.0);
        assert_eq!(p.f_star(), 0.0);
        let x = DVector::from_element(1, 0.7);
        let expect = 0.7f64.powi(2) + 3.0 * 0.7f64.sin().powi(2);
        assert_relative_eq!(p.mean_value(&x), expect, epsilon = 1e-15);
        // Component values do keep their slopes.
        assert_relative_eq!(p.value(0, &x), expect + 0.7, epsilon = 1e-15);
    }

    #[test]
    fn pl_rejects_unbalanced_slopes() {
        assert!(make_pl_problem(2, &[1.0, -0.5]).is_err());
        assert!(make_pl_problem(3, &[1.0, -1.0]).is_err());
        // Decimal slopes that cancel only up to rounding are accepted.
        assert!(make_pl_problem(3, &[0.1, 0.2, -0.3]).is_ok());
    }

    #[test]
    fn pl_certified_constants() {
        let p = make_pl_problem(2, &[0.5, -0.5]).unwrap();
        let c = problem_constants(&p, 10.0).unwrap();
        assert_eq!(c.mu, 1.0 / 32.0);
        assert_eq!(c.l, 8.0);
        assert_eq!(c.l_h, 12.0);
        assert_eq!(c.delta, 0.5);
        assert_eq!(c.g, 0.5 + 80.0);

        // Grid certificates on [-10, 10], step 1e-3: curvature bound and
        // gradient domination with constant 1/32.
        let mut k = -10_000i64;
        while k <= 10_000 {
            let x = k as f64 * 1e-3;
            let fpp = 2.0 + 6.0 * (2.0 * x).cos();
            assert!(fpp.abs() <= 8.0 + 1e-12);
            if k != 0 {
                let f = x * x + 3.0 * x.sin().powi(2);
                let fp = 2.0 * x + 3.0 * (2.0 * x).sin();
                assert!(
                    0.5 * fp * fp >= (1.0 / 32.0) * f,
                    "gradient domination fails at x = {x}"
                );
            }
            k += 1;
        }
    }

    #[test]
    fn vanishing_variance_gradients_vanish_at_minimizer() {
        let x_star = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = make_vanishing_variance_problem(&[1.0, 3.0, 0.5], x_star.clone()).unwrap();
        for i in 0..3 {
            assert_eq!(p.gradient(i, &x_star).norm(), 0.0);
        }
        assert_eq!(p.f_star(), 0.0);
        let c = problem_constants(&p, 2.0).unwrap();
        assert_relative_eq!(c.mu, 1.5, epsilon = 1e-12);
        assert_relative_eq!(c.l, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn constants_on_the_unit_identity_quadratic() {
        let c = problem_constants(&identity_1d(), 1.0).unwrap();
        assert_relative_eq!(c.mu, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.l, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.kappa, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.g, 1.0, epsilon = 1e-12);
        assert!(c.g_is_bound);
        assert_eq!(c.rho, 1.0);
        assert_eq!(c.delta, 0.0);
    }

    #[test]
    fn constants_reject_degenerate_radius() {
        assert!(problem_constants(&identity_1d(), 0.0).is_err());
        assert!(problem_constants(&identity_1d(), f64::NAN).is_err());
    }
}
