//! The linx bound: objective and gradient, a projected-gradient direct
//! solver, and the 2-block ADMM splitting.
//!
//! The objective is parameterized internally by a positive diagonal scale
//! vector; ordinary scaling by `gamma` is the special case
//! `Upsilon = sqrt(gamma) e`.

use nalgebra::{DMatrix, DVector};

use crate::error::MespError;
use crate::model::{ldet_psd, BoundResult, Instance, SpectralCache};
use crate::simplex::project_capped_simplex;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct LinxOptions {
    /// Projected-gradient norm stopping tolerance for the direct solver.
    pub pg_tol: f64,
    /// Residual tolerance for the ADMM solver.
    pub admm_tol: f64,
    pub max_iter: usize,
    /// ADMM penalty parameter.
    pub rho: f64,
}

impl Default for LinxOptions {
    fn default() -> Self {
        LinxOptions { pg_tol: 1e-7, admm_tol: 1e-6, max_iter: 10_000, rho: 1.0 }
    }
}

/// `Diag(Upsilon) C Diag(x) C Diag(Upsilon) + Diag(e - x)`.
fn scaled_argument(c: &DMatrix<f64>, x: &DVector<f64>, upsilon: &DVector<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    // B = Diag(Upsilon) C, H = B Diag(x) B^T + Diag(e - x)
    let b = DMatrix::from_fn(n, n, |i, j| upsilon[i] * c[(i, j)]);
    let mut h = DMatrix::zeros(n, n);
    for k in 0..n {
        let xk = x[k];
        if xk == 0.0 {
            continue;
        }
        let col = b.column(k);
        for i in 0..n {
            let v = xk * col[i];
            for j in i..n {
                h[(i, j)] += v * col[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
        h[(i, i)] += 1.0 - x[i];
    }
    h
}

/// Value and gradient of the g-scaled linx objective
/// `1/2 ldet(Diag(U) C Diag(x) C Diag(U) + Diag(e-x)) - sum x_i log u_i`.
/// Ordinary scaling by `gamma` is `U = sqrt(gamma) e`. Returns an error
/// when the argument matrix is not positive definite.
pub fn linx_value_grad_scaled(
    c: &DMatrix<f64>,
    x: &DVector<f64>,
    upsilon: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let n = c.nrows();
    let h = scaled_argument(c, x, upsilon);
    let ldet = ldet_psd(&h);
    if !ldet.is_finite() {
        return Err(MespError::Numerical("linx argument matrix is singular".into()));
    }
    let hinv = h
        .clone()
        .cholesky()
        .ok_or_else(|| MespError::Numerical("linx argument matrix not PD".into()))?
        .inverse();
    let log_gamma: DVector<f64> = upsilon.map(|u| u.ln());
    let value = 0.5 * ldet - x.dot(&log_gamma);
    let grad = DVector::from_fn(n, |i, _| {
        // b_i = Upsilon .* c_i is the i-th column of (Diag(U) C)^T
        let bi = DVector::from_fn(n, |k, _| upsilon[k] * c[(k, i)]);
        0.5 * ((&hinv * &bi).dot(&bi) - hinv[(i, i)]) - log_gamma[i]
    });
    Ok((value, grad))
}

/// Objective value and gradient for the ordinary-scaled linx bound at
/// `x`: value `1/2 (ldet(gamma C Diag(x) C + Diag(e-x)) - s log gamma)`,
/// gradient `1/2 (gamma c_i^T H^-1 c_i - (H^-1)_ii)` per coordinate
/// (the `- s log gamma` term is constant on the simplex).
pub fn linx_objective(
    c: &DMatrix<f64>,
    x: &DVector<f64>,
    gamma: f64,
    s: usize,
) -> Result<(f64, DVector<f64>)> {
    let upsilon = DVector::from_element(c.nrows(), gamma.sqrt());
    let (v, g) = linx_value_grad_scaled(c, x, &upsilon)?;
    // move from the per-coordinate correction -(1/2) sum x_i log gamma
    // to the constant-s form -(s/2) log gamma
    let half_lg = 0.5 * gamma.ln();
    let value = v + x.iter().sum::<f64>() * half_lg - s as f64 * half_lg;
    let grad = g.map(|gi| gi + half_lg);
    Ok((value, grad))
}

struct DirectSolve {
    x: DVector<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Projected-gradient ascent with Armijo backtracking over the capped
/// simplex.
fn maximize_direct(
    c: &DMatrix<f64>,
    s: usize,
    upsilon: &DVector<f64>,
    opts: &LinxOptions,
) -> Result<DirectSolve> {
    let n = c.nrows();
    let mut x = DVector::from_element(n, s as f64 / n as f64);
    let (mut value, mut grad) = linx_value_grad_scaled(c, &x, upsilon)?;
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let pg = &x - &project_capped_simplex(&(&x + &grad), s);
        if pg.norm() <= opts.pg_tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = project_capped_simplex(&(&x + &grad * step), s);
            let dx = &cand - &x;
            if dx.norm() <= 1e-16 {
                break;
            }
            match linx_value_grad_scaled(c, &cand, upsilon) {
                Ok((v, g)) if v >= value + 1e-4 * grad.dot(&dx) => {
                    x = cand;
                    value = v;
                    grad = g;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            converged = pg.norm() <= opts.pg_tol * 100.0;
            break;
        }
        step = (step * 1.5).min(1e6);
    }
    Ok(DirectSolve { x, value, iterations, converged })
}

/// Direct computation of the g-scaled linx bound; used by the scaling
/// layer and, through [`linx_bound_direct`], for ordinary scaling.
pub fn linx_bound_scaled(
    instance: &Instance,
    upsilon: &DVector<f64>,
    opts: &LinxOptions,
) -> Result<BoundResult> {
    let solve = maximize_direct(&instance.c, instance.s, upsilon, opts)?;
    let mut result = BoundResult::new(
        "linx-g",
        solve.value + instance.offset,
        solve.x.iter().cloned().collect(),
    );
    result.iterations = solve.iterations;
    result.converged = solve.converged;
    if !solve.converged {
        result.flags.push("max-iterations".into());
    }
    Ok(result)
}

/// The ordinary-scaled linx bound by projected gradient.
pub fn linx_bound_direct(instance: &Instance, gamma: f64, opts: &LinxOptions) -> Result<BoundResult> {
    if gamma <= 0.0 {
        return Err(MespError::InvalidInstance("gamma must be positive".into()));
    }
    let upsilon = DVector::from_element(instance.n(), gamma.sqrt());
    let mut result = linx_bound_scaled(instance, &upsilon, opts)?;
    result.name = "linx".into();
    result.duals.insert("gamma".into(), vec![gamma]);
    Ok(result)
}

/// `gamma C Diag(x) C + Diag(e - x)`.
fn linx_argument(c: &DMatrix<f64>, x: &DVector<f64>, gamma: f64) -> DMatrix<f64> {
    let upsilon = DVector::from_element(c.nrows(), gamma.sqrt());
    scaled_argument(c, x, &upsilon)
}

/// Per-eigenvalue closed form of the log-det prox:
/// minimizes `-ldet Z + rho/2 ||Z - M||_F^2`.
pub fn logdet_prox(m: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let spec = SpectralCache::new(m);
    let z = spec.eigenvalues.map(|mu| 0.5 * (mu + (mu * mu + 4.0 / rho).sqrt()));
    &spec.eigenvectors * DMatrix::from_diagonal(&z) * spec.eigenvectors.transpose()
}

/// The 2-block ADMM for the linx bound. The `x` update is an inexact
/// bounded-variable least-squares solve (a fixed number of projected
/// gradient steps on the box), the `Z` update is the closed-form log-det
/// prox, and the multiplier updates are the standard scaled formulas.
/// The reported bound is always the objective at a feasibility-projected
/// `x`, never the raw ADMM objective.
pub fn linx_admm(instance: &Instance, gamma: f64, opts: &LinxOptions) -> Result<BoundResult> {
    if gamma <= 0.0 || opts.rho <= 0.0 {
        return Err(MespError::InvalidInstance("gamma and rho must be positive".into()));
    }
    let n = instance.n();
    let s = instance.s as f64;
    let c = &instance.c;
    let mut rho = opts.rho;

    let mut x = DVector::from_element(n, s / n as f64);
    let mut z = linx_argument(c, &x, gamma);
    let mut psi = DMatrix::<f64>::zeros(n, n);
    let mut delta = 0.0;

    let mut iterations = 0;
    let mut converged = false;
    let mut flags: Vec<String> = Vec::new();
    let mut resid_history: Vec<f64> = Vec::new();

    for iter in 0..opts.max_iter {
        iterations = iter + 1;

        // x-update: 50 projected-gradient steps on the box for
        // rho/2 ||A(x) - (Z + Psi)||^2 + rho/2 (s - e'x + delta)^2
        let target = &z + &psi;
        let mut step_x = 1.0 / rho.max(1.0);
        let obj = |xv: &DVector<f64>| -> f64 {
            let a = linx_argument(c, xv, gamma);
            let r = &a - &target;
            let lin = s - xv.iter().sum::<f64>() + delta;
            0.5 * rho * (r.norm_squared() + lin * lin)
        };
        let grad_of = |xv: &DVector<f64>| -> DVector<f64> {
            let a = linx_argument(c, xv, gamma);
            let r = &a - &target;
            let lin = s - xv.iter().sum::<f64>() + delta;
            DVector::from_fn(n, |i, _| {
                let ci = c.column(i);
                let quad = gamma * (&r * ci).dot(&ci) - r[(i, i)];
                rho * (quad - lin)
            })
        };
        let mut fx = obj(&x);
        for _ in 0..50 {
            let g = grad_of(&x);
            let mut accepted = false;
            for _ in 0..40 {
                let cand = (&x - &g * step_x).map(|v| v.clamp(0.0, 1.0));
                let fc = obj(&cand);
                if fc <= fx - 1e-12 * fx.abs().max(1.0) {
                    x = cand;
                    fx = fc;
                    accepted = true;
                    break;
                }
                step_x *= 0.5;
            }
            if !accepted {
                break;
            }
            step_x *= 1.3;
        }

        // Z-update: closed-form log-det prox at A(x) - Psi
        let a = linx_argument(c, &x, gamma);
        let z_prev = z.clone();
        z = logdet_prox(&(&a - &psi), rho);

        // multiplier updates
        let primal_mat = &z - &a;
        psi += &primal_mat;
        let primal_scalar = s - x.iter().sum::<f64>();
        delta += primal_scalar;

        let primal = primal_mat.norm() + primal_scalar.abs();
        let dual = rho * (&z - &z_prev).norm();
        resid_history.push(primal.max(dual));
        if primal <= opts.admm_tol && dual <= opts.admm_tol {
            converged = true;
            break;
        }
        // residual balancing keeps the two residuals comparable
        if iter % 20 == 19 {
            if primal > 10.0 * dual {
                rho *= 2.0;
                psi /= 2.0;
                delta /= 2.0;
            } else if dual > 10.0 * primal {
                rho /= 2.0;
                psi *= 2.0;
                delta *= 2.0;
            }
        }
        if resid_history.len() > 100 {
            let old = resid_history[resid_history.len() - 101];
            if resid_history.last().unwrap() > &(10.0 * old.max(1e-12)) {
                flags.push("divergence".into());
                break;
            }
        }
    }

    let xf = project_capped_simplex(&x, instance.s);
    let (value, _) = linx_objective(c, &xf, gamma, instance.s)?;
    let mut result = BoundResult::new("linx-admm", value + instance.offset, xf.iter().cloned().collect());
    result.iterations = iterations;
    result.converged = converged;
    result.flags = flags;
    if !converged && result.flags.is_empty() {
        result.flags.push("max-iterations".into());
    }
    result.duals.insert("gamma".into(), vec![gamma]);
    result.duals.insert("rho".into(), vec![rho]);
    Ok(result)
}
