//! Bound improvement by scaling and masking: 1-D convex search over the
//! ordinary scale factor, quasi-Newton search over a per-coordinate
//! scaling vector, and Hadamard masking by a correlation matrix.

use nalgebra::{DMatrix, DVector};

use crate::bqp::{bqp_admm, BqpOptions};
use crate::error::MespError;
use crate::fact::{solve_fw, FactOptions};
use crate::linx::{linx_bound_scaled, LinxOptions};
use crate::model::{factor_or_default, Instance, PSD_TOL};
use crate::Result;

pub const SLOPE_TOL: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Linx,
    DdFact,
    Bqp,
}

/// Per-coordinate scaling vector; ordinary scaling is the constant case.
#[derive(Debug, Clone)]
pub struct ScaleVector {
    pub upsilon: DVector<f64>,
}

impl ScaleVector {
    pub fn from_log(t: &DVector<f64>) -> Self {
        ScaleVector {
            upsilon: t.map(f64::exp),
        }
    }

    pub fn log_upsilon(&self) -> DVector<f64> {
        self.upsilon.map(f64::ln)
    }
}

#[derive(Debug, Clone)]
pub struct ScalingOptions {
    pub fd_step: f64,
    pub slope_tol: f64,
    pub grad_tol: f64,
    pub max_outer_iter: usize,
    pub linx: LinxOptions,
    pub fact: FactOptions,
    pub bqp: BqpOptions,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            fd_step: FD_STEP,
            slope_tol: SLOPE_TOL,
            grad_tol: GRAD_TOL,
            max_outer_iter: 200,
            linx: LinxOptions::default(),
            fact: FactOptions::default(),
            bqp: BqpOptions::default(),
        }
    }
}

/// Bound value at an ordinary scale factor `gamma`.
fn eval_gamma(kind: BoundKind, instance: &Instance, gamma: f64, opts: &ScalingOptions) -> Result<f64> {
    match kind {
        BoundKind::Linx => Ok(crate::linx::linx_bound_direct(instance, gamma, &opts.linx)?.value),
        BoundKind::Bqp => Ok(bqp_admm(instance, gamma, None, &opts.bqp)?.value),
        BoundKind::DdFact => Err(MespError::InvalidInstance(
            "the factorization bound is scale invariant; nothing to optimize".into(),
        )),
    }
}

/// g-scaled bound value at `upsilon`.
fn eval_upsilon(
    kind: BoundKind,
    instance: &Instance,
    upsilon: &DVector<f64>,
    opts: &ScalingOptions,
) -> Result<f64> {
    match kind {
        BoundKind::Linx => Ok(linx_bound_scaled(instance, upsilon, &opts.linx)?.value),
        BoundKind::DdFact => {
            // unscaled bound on Diag(sqrt U) C Diag(sqrt U), correction
            // -sum x_i log u_i; on factors this is F -> Diag(sqrt u) F
            let f = factor_or_default(instance)?;
            let root = upsilon.map(f64::sqrt);
            let fs = DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| root[i] * f[(i, j)]);
            let linear = -upsilon.map(f64::ln);
            let solve = solve_fw(&fs, instance.s, 0.0, Some(&linear), &opts.fact)?;
            Ok(solve.value + instance.offset)
        }
        BoundKind::Bqp => {
            // unscaled bound on Diag(U) C Diag(U), correction -2 sum x_i log u_i
            let n = instance.n();
            let c = DMatrix::from_fn(n, n, |i, j| upsilon[i] * instance.c[(i, j)] * upsilon[j]);
            let mut scaled = Instance::new(c, instance.s);
            scaled.offset = instance.offset;
            let linear = -2.0 * upsilon.map(f64::ln);
            Ok(bqp_admm(&scaled, 1.0, Some(&linear), &opts.bqp)?.value)
        }
    }
}

/// Minimizes the bound over the ordinary scale factor by golden-section
/// on `log gamma`; `gamma = 1` stays in the candidate set, so the result
/// never exceeds the unscaled bound.
pub fn optimize_gamma(
    kind: BoundKind,
    instance: &Instance,
    opts: &ScalingOptions,
) -> Result<(f64, f64)> {
    if kind == BoundKind::DdFact {
        return Err(MespError::InvalidInstance(
            "the factorization bound is scale invariant; nothing to optimize".into(),
        ));
    }
    let eval = |t: f64| eval_gamma(kind, instance, t.exp(), opts);

    // bracket a minimizer of the convex function around t = 0 by
    // widening whichever side currently holds the running minimum
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut f_lo = eval(lo)?;
    let mut f_hi = eval(hi)?;
    let mut f_mid = eval(0.0)?;
    loop {
        if f_lo < f_mid {
            lo *= 2.0;
            f_lo = eval(lo)?;
            if lo < -40.0 {
                break;
            }
        } else if f_hi < f_mid {
            hi *= 2.0;
            f_hi = eval(hi)?;
            if hi > 40.0 {
                break;
            }
        } else {
            break;
        }
        f_mid = eval((lo + hi) / 2.0)?;
    }

    // golden-section on [lo, hi]
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    for _ in 0..80 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d)?;
        }
        // slope estimate across the interval
        let h = (b - a).max(1e-8);
        if ((fd - fc) / h).abs() <= opts.slope_tol && (b - a) < 1e-4 {
            break;
        }
    }
    let t_star = if fc < fd { c } else { d };
    let f_star = fc.min(fd);
    // never worse than the unscaled bound
    let f_one = eval(0.0)?;
    if f_one <= f_star {
        Ok((1.0, f_one))
    } else {
        Ok((t_star.exp(), f_star))
    }
}

/// Central finite-difference gradient in `log upsilon`.
fn fd_gradient(
    kind: BoundKind,
    instance: &Instance,
    t: &DVector<f64>,
    opts: &ScalingOptions,
) -> Result<DVector<f64>> {
    let n = t.len();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let h = opts.fd_step * t[i].abs().max(1.0);
        let mut tp = t.clone();
        tp[i] += h;
        let mut tm = t.clone();
        tm[i] -= h;
        let fp = eval_upsilon(kind, instance, &tp.map(f64::exp), opts)?;
        let fm = eval_upsilon(kind, instance, &tm.map(f64::exp), opts)?;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Minimizes the g-scaled bound over `log upsilon` by BFGS with
/// backtracking line search. Starts at the o-scaled optimum (or at
/// `upsilon = e` for the scale-invariant factorization bound), so the
/// result never exceeds the best o-scaled value.
pub fn optimize_upsilon(
    kind: BoundKind,
    instance: &Instance,
    opts: &ScalingOptions,
) -> Result<(ScaleVector, f64)> {
    let n = instance.n();
    let t0 = match kind {
        BoundKind::DdFact => DVector::zeros(n),
        _ => {
            let (gamma, _) = optimize_gamma(kind, instance, opts)?;
            DVector::from_element(n, 0.5 * gamma.ln())
        }
    };
    let mut t = t0;
    let mut f = eval_upsilon(kind, instance, &t.map(f64::exp), opts)?;
    let mut g = fd_gradient(kind, instance, &t, opts)?;
    let mut h_inv = DMatrix::identity(n, n);

    for _ in 0..opts.max_outer_iter {
        if g.norm() <= opts.grad_tol {
            break;
        }
        let dir = -(&h_inv * &g);
        let slope = g.dot(&dir);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            continue;
        }
        // backtracking Armijo line search
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let t_new = &t + step * &dir;
            match eval_upsilon(kind, instance, &t_new.map(f64::exp), opts) {
                Ok(f_new) if f_new <= f + 1e-4 * step * slope => {
                    let g_new = fd_gradient(kind, instance, &t_new, opts)?;
                    let sk = step * &dir;
                    let yk = &g_new - &g;
                    let sy = sk.dot(&yk);
                    if sy > 1e-12 {
                        let rho = 1.0 / sy;
                        let i = DMatrix::identity(n, n);
                        let left = &i - rho * (&sk * yk.transpose());
                        let right = &i - rho * (&yk * sk.transpose());
                        h_inv = &left * h_inv * right + rho * (&sk * sk.transpose());
                    }
                    t = t_new;
                    f = f_new;
                    g = g_new;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok((
        ScaleVector {
            upsilon: t.map(f64::exp),
        },
        f,
    ))
}

/// Hadamard mask by a correlation matrix: symmetric, PSD, unit diagonal.
pub fn apply_mask(instance: &Instance, mask: &DMatrix<f64>) -> Result<Instance> {
    let n = instance.n();
    if mask.nrows() != n || mask.ncols() != n {
        return Err(MespError::InvalidInstance(format!(
            "mask is {}x{}, expected {n}x{n}",
            mask.nrows(),
            mask.ncols()
        )));
    }
    let asym = (mask - mask.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(MespError::InvalidInstance(format!(
            "mask asymmetry {asym:.3e}"
        )));
    }
    for i in 0..n {
        if (mask[(i, i)] - 1.0).abs() > 1e-10 {
            return Err(MespError::InvalidInstance(format!(
                "mask diagonal entry {} is {:.12}, expected 1",
                i + 1,
                mask[(i, i)]
            )));
        }
    }
    let min_eig = crate::model::SpectralCache::new(mask)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL {
        return Err(MespError::InvalidInstance(format!(
            "mask minimum eigenvalue {min_eig:.3e}"
        )));
    }
    let c = DMatrix::from_fn(n, n, |i, j| instance.c[(i, j)] * mask[(i, j)]);
    let mut masked = Instance::new(c, instance.s).with_label(format!("{}-masked", instance.label));
    masked.offset = instance.offset;
    Ok(masked)
}
