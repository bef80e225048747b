//! The factorization bound: a Frank-Wolfe solver with away steps over the
//! capped simplex, the closed-form dual certificate, duality-based
//! variable fixing, and the augmented variant for positive definite
//! covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::MespError;
use crate::gamma::{
    dual_beta, dual_theta_from_spectral, gamma_spectrum, supergradient, weighted_gram, EPS_RANK,
};
use crate::model::{
    factor_or_default, factorize, BoundResult, Instance, SpectralCache, SING_TOL,
};
use crate::simplex::{indicator, top_s_indices};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct FactOptions {
    /// Stop when the Frank-Wolfe gap falls below this.
    pub fw_tol: f64,
    /// Stop when the dual certificate gap falls below this.
    pub dual_tol: f64,
    pub max_iter: usize,
    /// Epsilon on dual eigenvalues beyond the numerical rank.
    pub eps_rank: f64,
    /// Guard band on the strict fixing inequalities.
    pub fix_safety: f64,
}

impl Default for FactOptions {
    fn default() -> Self {
        FactOptions {
            fw_tol: 1e-7,
            dual_tol: 1e-6,
            max_iter: 5000,
            eps_rank: EPS_RANK,
            fix_safety: 1e-7,
        }
    }
}

/// Feasible dual point for the factorization bound's minimization form,
/// with the stationarity residual held at zero by construction.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    pub theta: DMatrix<f64>,
    pub upsilon: DVector<f64>,
    pub nu: DVector<f64>,
    pub tau: f64,
    /// Dual objective value.
    pub objective: f64,
    /// Duality gap against the primal value at the certificate's x.
    pub gap: f64,
    /// `diag(F Theta F^T)`.
    pub d: DVector<f64>,
}

/// Index sets forced by duality fixing.
#[derive(Debug, Clone, Default)]
pub struct FixReport {
    pub fix_zero: Vec<usize>,
    pub fix_one: Vec<usize>,
    /// Indices where both inequalities fired; flagged, never fixed.
    pub conflicted: Vec<usize>,
}

/// Raw outcome of the Frank-Wolfe solve, before offsets are applied.
#[derive(Debug, Clone)]
pub struct FactSolve {
    pub x: DVector<f64>,
    /// Objective at `x` (Gamma plus any linear term).
    pub value: f64,
    /// Final Frank-Wolfe gap; equals the dual certificate gap.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct GradEval {
    value: f64,
    /// Gamma supergradient plus the linear term.
    grad: DVector<f64>,
}

fn eval_point(
    f: &DMatrix<f64>,
    x: &DVector<f64>,
    s: usize,
    shift: f64,
    linear: Option<&DVector<f64>>,
    eps: f64,
) -> Result<GradEval> {
    let gram = weighted_gram(f, x);
    let spec = SpectralCache::new(&gram);
    let lambda: Vec<f64> = spec.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let gamma = gamma_spectrum(&lambda, s, shift)?;
    let theta = dual_theta_from_spectral(&spec, s, shift, eps)?;
    let mut grad = supergradient(f, &theta);
    let mut value = gamma.value;
    if let Some(c) = linear {
        value += c.dot(x);
        grad += c;
    }
    Ok(GradEval { value, grad })
}

/// Maximizes `Gamma_s(F^T Diag(x) F) + linear . x` over the capped
/// simplex by Frank-Wolfe with away steps over an explicit atom set.
///
/// The initial point `x = (s/n) e` is kept as an atom of its own so away
/// steps can drain its mass; the linear-maximization oracle is top-`s`
/// selection on the gradient.
pub fn solve_fw(
    f: &DMatrix<f64>,
    s: usize,
    shift: f64,
    linear: Option<&DVector<f64>>,
    opts: &FactOptions,
) -> Result<FactSolve> {
    let n = f.nrows();
    if s == 0 || s > n || s > f.ncols() {
        return Err(MespError::InvalidInstance(format!(
            "s = {s} invalid for n = {n}, factor width {}",
            f.ncols()
        )));
    }

    let x0 = DVector::from_element(n, s as f64 / n as f64);
    let mut atoms: Vec<(DVector<f64>, f64, Option<Vec<usize>>)> = vec![(x0.clone(), 1.0, None)];
    let mut x = x0;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut ev = eval_point(f, &x, s, shift, linear, opts.eps_rank)?;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let top = top_s_indices(&ev.grad, s);
        let v_fw = indicator(n, &top);
        gap = ev.grad.dot(&v_fw) - ev.grad.dot(&x);
        if gap <= opts.fw_tol || gap <= opts.dual_tol.min(opts.fw_tol) {
            converged = true;
            break;
        }

        // away atom: the active atom the gradient likes least
        let away_idx = (0..atoms.len())
            .min_by(|&a, &b| {
                ev.grad.dot(&atoms[a].0).partial_cmp(&ev.grad.dot(&atoms[b].0)).unwrap()
            })
            .unwrap();
        let away_gap = ev.grad.dot(&x) - ev.grad.dot(&atoms[away_idx].0);

        let take_fw = gap >= away_gap || atoms.len() == 1;
        let (dir, gamma_max) = if take_fw {
            (&v_fw - &x, 1.0)
        } else {
            let w = atoms[away_idx].1;
            ((&x - &atoms[away_idx].0) * 1.0, w / (1.0 - w).max(1e-16))
        };

        let step = line_search(f, &x, &dir, gamma_max, s, shift, linear, opts.eps_rank);
        if step <= 0.0 {
            converged = gap <= opts.fw_tol * 10.0;
            break;
        }
        x += &dir * step;
        for xi in x.iter_mut() {
            *xi = xi.clamp(0.0, 1.0);
        }

        if take_fw {
            for atom in atoms.iter_mut() {
                atom.1 *= 1.0 - step;
            }
            match atoms.iter_mut().find(|a| a.2.as_deref() == Some(top.as_slice())) {
                Some(atom) => atom.1 += step,
                None => atoms.push((v_fw, step, Some(top))),
            }
        } else {
            for atom in atoms.iter_mut() {
                atom.1 *= 1.0 + step;
            }
            atoms[away_idx].1 -= step;
        }
        atoms.retain(|a| a.1 > 1e-14);

        ev = eval_point(f, &x, s, shift, linear, opts.eps_rank)?;
    }

    Ok(FactSolve { x, value: ev.value, gap, iterations, converged })
}

/// Bisection on the directional derivative; the objective is concave
/// along the segment so the derivative is nonincreasing in the step.
#[allow(clippy::too_many_arguments)]
fn line_search(
    f: &DMatrix<f64>,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    gamma_max: f64,
    s: usize,
    shift: f64,
    linear: Option<&DVector<f64>>,
    eps: f64,
) -> f64 {
    let slope_at = |t: f64| -> f64 {
        let point = x + dir * t;
        match eval_point(f, &point, s, shift, linear, eps) {
            Ok(ev) => ev.grad.dot(dir),
            Err(_) => -1e30, // Gamma undefined past this step
        }
    };
    if slope_at(0.0) <= 0.0 {
        return 0.0;
    }
    if slope_at(gamma_max) >= 0.0 {
        return gamma_max;
    }
    let (mut lo, mut hi) = (0.0, gamma_max);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if slope_at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Builds the dual matrix at a feasible `x` with finite Gamma.
pub fn dual_theta(x: &DVector<f64>, f: &DMatrix<f64>, s: usize, eps: f64) -> Result<DMatrix<f64>> {
    let spec = SpectralCache::new(&weighted_gram(f, x));
    dual_theta_from_spectral(&spec, s, 0.0, eps)
}

/// Closed-form completion of the dual point at `x`: sorts
/// `d = diag(F Theta F^T)` non-increasing, takes `tau` at position `s`,
/// and splits the residual between the two sign-constrained multipliers.
pub fn dual_certificate(x: &DVector<f64>, f: &DMatrix<f64>, s: usize, opts: &FactOptions) -> Result<DualCertificate> {
    let n = f.nrows();
    let gram = weighted_gram(f, x);
    let spec = SpectralCache::new(&gram);
    let lambda: Vec<f64> = spec.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let gamma = gamma_spectrum(&lambda, s, 0.0)?;
    let theta = dual_theta_from_spectral(&spec, s, 0.0, opts.eps_rank)?;
    let d = supergradient(f, &theta);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap().then(a.cmp(&b)));
    let tau = d[order[s - 1]];
    let mut nu = DVector::zeros(n);
    for &i in order.iter().take(s) {
        nu[i] = d[i] - tau;
    }
    let upsilon = &nu + DVector::from_element(n, tau) - &d;

    // dual objective: -sum of the s smallest log-eigenvalues of Theta
    let beta = dual_beta(&lambda, s, 0.0, opts.eps_rank)?;
    let mut sorted = beta.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let neg_logs: f64 = -sorted[..s].iter().map(|b| b.ln()).sum::<f64>();
    let objective = neg_logs + nu.sum() + tau * s as f64 - s as f64;
    let gap = objective - gamma.value;

    Ok(DualCertificate { theta, upsilon, nu, tau, objective, gap, d })
}

/// Computes the factorization bound with relaxation solution and dual
/// certificate. The reported value includes the instance offset.
pub fn ddfact_bound(instance: &Instance, opts: &FactOptions) -> Result<BoundResult> {
    let f = factor_or_default(instance)?;
    let solve = solve_fw(&f, instance.s, 0.0, None, opts)?;
    let cert = dual_certificate(&solve.x, &f, instance.s, opts)?;
    let mut result = BoundResult::new("ddfact", solve.value + instance.offset, solve.x.iter().cloned().collect());
    result.iterations = solve.iterations;
    result.converged = solve.converged;
    if !solve.converged {
        result.flags.push("max-iterations".into());
    }
    result.duals.insert("upsilon".into(), cert.upsilon.iter().cloned().collect());
    result.duals.insert("nu".into(), cert.nu.iter().cloned().collect());
    result.duals.insert("tau".into(), vec![cert.tau]);
    result.duals.insert("gap".into(), vec![cert.gap]);
    Ok(result)
}

/// Theorem-style variable fixing from a dual certificate: indices whose
/// dual value strictly exceeds the bound-incumbent gap are forced.
pub fn variable_fix(zeta: f64, lb: f64, cert: &DualCertificate, fix_safety: f64) -> Result<FixReport> {
    if lb > zeta + 1e-9 {
        return Err(MespError::Inconsistent(format!(
            "incumbent {lb} exceeds dual bound {zeta}"
        )));
    }
    let slack = zeta - lb;
    let mut report = FixReport::default();
    for j in 0..cert.upsilon.len() {
        let zero = slack < cert.upsilon[j] - fix_safety;
        let one = slack < cert.nu[j] - fix_safety;
        match (zero, one) {
            (true, true) => report.conflicted.push(j),
            (true, false) => report.fix_zero.push(j),
            (false, true) => report.fix_one.push(j),
            (false, false) => {}
        }
    }
    Ok(report)
}

/// Backoff factor for the degenerate shift `rank(C - lambda_min I) < s`.
pub const SHIFT_BACKOFF: f64 = 1e-4;

/// The augmented factorization bound for positive definite `C`: the
/// covariance is shifted by `lambda <= lambda_min(C)` and the Gamma
/// evaluation adds the shift back per eigenvalue, which keeps integral
/// points exact and tightens the relaxation.
pub fn augmented_fact_bound(instance: &Instance, opts: &FactOptions) -> Result<BoundResult> {
    let n = instance.n();
    let spec = SpectralCache::new(&instance.c);
    let lam_min = spec.eigenvalues[n - 1];
    let lam_max = spec.eigenvalues[0];
    if lam_min <= SING_TOL * lam_max.max(1.0) {
        return Err(MespError::InvalidInstance("augmented bound requires positive definite C".into()));
    }

    let mut flags = Vec::new();
    let shifted_rank = spec.eigenvalues.iter().filter(|&&l| l - lam_min > 1e-9 * lam_max).count();
    let lambda = if shifted_rank >= instance.s {
        lam_min
    } else {
        flags.push("shift-backoff".into());
        (1.0 - SHIFT_BACKOFF) * lam_min
    };

    let shifted = &instance.c - DMatrix::identity(n, n) * lambda;
    let factored = factorize(&Instance::new(shifted, instance.s), n)?;
    let f = factored.factor.unwrap();
    let solve = solve_fw(&f, instance.s, lambda, None, opts)?;

    let mut result = BoundResult::new(
        "augmented-fact",
        solve.value + instance.offset,
        solve.x.iter().cloned().collect(),
    );
    result.iterations = solve.iterations;
    result.converged = solve.converged;
    result.flags = flags;
    if !solve.converged {
        result.flags.push("max-iterations".into());
    }
    result.duals.insert("shift".into(), vec![lambda]);
    Ok(result)
}
