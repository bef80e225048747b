//! Lifted bound with the Hadamard-product objective
//! `ldet(gamma C∘X + Diag(e-x)) - s log gamma` over `X ⪰ xxᵀ`,
//! computed by a 3-block ADMM on the (n+1)×(n+1) lifted matrix
//! `W = [[1, xᵀ],[x, X]]`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::MespError;
use crate::linx::logdet_prox;
use crate::model::{ldet_psd, BoundResult, Instance, PSD_TOL};
use crate::simplex::project_capped_simplex;
use crate::Result;

#[derive(Debug, Clone)]
pub struct BqpOptions {
    pub admm_tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub w_tol: f64,
}

impl Default for BqpOptions {
    fn default() -> Self {
        BqpOptions {
            admm_tol: 1e-6,
            max_iter: 20_000,
            rho: 1.0,
            w_tol: 1e-10,
        }
    }
}

/// A point on the lifted feasible set: `x` with its second-moment
/// matrix `X`; `lifted()` assembles `W = [[1, xᵀ],[x, X]]`.
#[derive(Debug, Clone)]
pub struct LiftedPoint {
    pub x: DVector<f64>,
    pub xx: DMatrix<f64>,
}

impl LiftedPoint {
    pub fn lifted(&self) -> DMatrix<f64> {
        let n = self.x.len();
        let mut w = DMatrix::zeros(n + 1, n + 1);
        w[(0, 0)] = 1.0;
        for i in 0..n {
            w[(0, i + 1)] = self.x[i];
            w[(i + 1, 0)] = self.x[i];
            for j in 0..n {
                w[(i + 1, j + 1)] = self.xx[(i, j)];
            }
        }
        w
    }

    /// Lift of the indicator of a subset: `X = xxᵀ`.
    pub fn integral(n: usize, subset: &[usize]) -> LiftedPoint {
        let x = crate::simplex::indicator(n, subset);
        let xx = &x * x.transpose();
        LiftedPoint { x, xx }
    }

    /// Uniform-over-subsets moment point: `x = (s/n)e`,
    /// `X_ii = s/n`, `X_ij = s(s-1)/(n(n-1))`.
    pub fn uniform(n: usize, s: usize) -> LiftedPoint {
        let p = s as f64 / n as f64;
        let q = (s * s.saturating_sub(1)) as f64 / (n * (n - 1)) as f64;
        let x = DVector::from_element(n, p);
        let xx = DMatrix::from_fn(n, n, |i, j| if i == j { p } else { q });
        LiftedPoint { x, xx }
    }
}

/// `ldet(gamma C∘X + Diag(e-x)) - s log gamma`.
pub fn bqp_objective(c: &DMatrix<f64>, point: &LiftedPoint, gamma: f64, s: usize) -> Result<f64> {
    let n = c.nrows();
    let mut m = DMatrix::from_fn(n, n, |i, j| gamma * c[(i, j)] * point.xx[(i, j)]);
    for i in 0..n {
        m[(i, i)] += 1.0 - point.x[i];
    }
    let v = ldet_psd(&m);
    if !v.is_finite() {
        return Err(MespError::Numerical(
            "lifted objective argument is singular".into(),
        ));
    }
    Ok(v - s as f64 * gamma.ln())
}

/// The 2n+2 linear constraints on `W` as symmetric matrices `G_l` with
/// right-hand sides `g_l`, expressing `diag(X)=x`, `Xe=sx`, `eᵀx=s`,
/// and `W_00=1` in the form `g_l - G_l • W = 0`.
pub fn linear_constraints(n: usize, s: usize) -> Vec<(DMatrix<f64>, f64)> {
    let m = n + 1;
    let mut out = Vec::with_capacity(2 * n + 2);
    for i in 0..n {
        let mut g = DMatrix::zeros(m, m);
        g[(i + 1, i + 1)] = 1.0;
        g[(0, i + 1)] = -0.5;
        g[(i + 1, 0)] = -0.5;
        out.push((g, 0.0));
    }
    for i in 0..n {
        let mut g = DMatrix::zeros(m, m);
        for j in 0..n {
            if j == i {
                g[(i + 1, i + 1)] = 1.0;
            } else {
                g[(i + 1, j + 1)] += 0.5;
                g[(j + 1, i + 1)] += 0.5;
            }
        }
        g[(0, i + 1)] -= s as f64 / 2.0;
        g[(i + 1, 0)] -= s as f64 / 2.0;
        out.push((g, 0.0));
    }
    let mut g = DMatrix::zeros(m, m);
    for i in 0..n {
        g[(0, i + 1)] = 0.5;
        g[(i + 1, 0)] = 0.5;
    }
    out.push((g, s as f64));
    let mut g = DMatrix::zeros(m, m);
    g[(0, 0)] = 1.0;
    out.push((g, 1.0));
    out
}

/// `G_l • W` for all 2n+2 constraints, without materializing the `G_l`.
fn constraint_values(w: &DMatrix<f64>, s: usize) -> DVector<f64> {
    let n = w.nrows() - 1;
    let mut v = DVector::zeros(2 * n + 2);
    for i in 0..n {
        v[i] = w[(i + 1, i + 1)] - w[(0, i + 1)];
    }
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += w[(i + 1, j + 1)];
        }
        v[n + i] = row - s as f64 * w[(0, i + 1)];
    }
    v[2 * n] = (0..n).map(|i| w[(0, i + 1)]).sum();
    v[2 * n + 1] = w[(0, 0)];
    v
}

/// Adjoint: accumulate `sum_l coeff_l G_l` into `out`.
fn constraint_adjoint(coeff: &DVector<f64>, s: usize, out: &mut DMatrix<f64>) {
    let n = out.nrows() - 1;
    for i in 0..n {
        let c = coeff[i];
        out[(i + 1, i + 1)] += c;
        out[(0, i + 1)] -= 0.5 * c;
        out[(i + 1, 0)] -= 0.5 * c;
    }
    for i in 0..n {
        let c = coeff[n + i];
        for j in 0..n {
            if j == i {
                out[(i + 1, i + 1)] += c;
            } else {
                out[(i + 1, j + 1)] += 0.5 * c;
                out[(j + 1, i + 1)] += 0.5 * c;
            }
        }
        out[(0, i + 1)] -= 0.5 * s as f64 * c;
        out[(i + 1, 0)] -= 0.5 * s as f64 * c;
    }
    let c = coeff[2 * n];
    for i in 0..n {
        out[(0, i + 1)] += 0.5 * c;
        out[(i + 1, 0)] += 0.5 * c;
    }
    out[(0, 0)] += coeff[2 * n + 1];
}

fn constraint_rhs(n: usize, s: usize) -> DVector<f64> {
    let mut g = DVector::zeros(2 * n + 2);
    g[2 * n] = s as f64;
    g[2 * n + 1] = 1.0;
    g
}

/// Euclidean projection onto the PSD cone: clip eigenvalues at zero.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(i, j)])
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for the W-step normal equations
/// `C̃∘C̃∘W + W + sum_l (G_l•W) G_l = rhs`.
fn solve_w(
    ct: &DMatrix<f64>,
    s: usize,
    rhs: &DMatrix<f64>,
    w0: &DMatrix<f64>,
    tol: f64,
) -> DMatrix<f64> {
    let apply = |w: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = hadamard(&hadamard(ct, ct), w) + w;
        let vals = constraint_values(w, s);
        constraint_adjoint(&vals, s, &mut out);
        out
    };
    let mut w = w0.clone();
    let mut r = rhs - apply(&w);
    let mut p = r.clone();
    let mut rr = frob_dot(&r, &r);
    let rhs_norm = frob_dot(rhs, rhs).sqrt().max(1.0);
    for _ in 0..(w.nrows() * w.nrows() + 10) {
        if rr.sqrt() <= tol * rhs_norm {
            break;
        }
        let ap = apply(&p);
        let alpha = rr / frob_dot(&p, &ap).max(f64::MIN_POSITIVE);
        w += alpha * &p;
        r -= alpha * &ap;
        let rr_new = frob_dot(&r, &r);
        p = &r + (rr_new / rr) * p;
        rr = rr_new;
    }
    w
}

/// Least-squares repair of `X` to satisfy `diag(X')=x` and `X'e=sx`
/// exactly; the minimizer has the form `X + Diag(a) + (m eᵀ + e mᵀ)/2`.
fn repair_x(x: &DVector<f64>, xx: &DMatrix<f64>, s: usize) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DVector::zeros(2 * n);
    // diag equations: a_i + m_i = x_i - X_ii
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(i, n + i)] = 1.0;
        b[i] = x[i] - xx[(i, i)];
    }
    // row-sum equations: a_i + (n m_i + sum m)/2 = s x_i - rowsum_i
    for i in 0..n {
        a[(n + i, i)] = 1.0;
        a[(n + i, n + i)] += n as f64 / 2.0;
        for j in 0..n {
            a[(n + i, n + j)] += 0.5;
        }
        b[n + i] = s as f64 * x[i] - xx.row(i).iter().sum::<f64>();
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| MespError::Numerical("lift repair system is singular".into()))?;
    let mut out = xx.clone();
    for i in 0..n {
        out[(i, i)] += sol[i];
        for j in 0..n {
            out[(i, j)] += 0.5 * (sol[n + i] + sol[n + j]);
        }
    }
    Ok(out)
}

/// 3-block ADMM for the lifted bound. `linear` adds an extra `lᵀx`
/// term to the maximization objective (used by generalized scaling).
pub fn bqp_admm(
    instance: &Instance,
    gamma: f64,
    linear: Option<&DVector<f64>>,
    opts: &BqpOptions,
) -> Result<BoundResult> {
    let n = instance.n();
    let s = instance.s;
    let m = n + 1;
    if gamma <= 0.0 {
        return Err(MespError::InvalidInstance("scale factor must be positive".into()));
    }
    let mut ct = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            ct[(i + 1, j + 1)] = gamma * instance.c[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    // border linear term: L_0i = l_i/2 so that L•W = lᵀx
    let mut lmat = DMatrix::zeros(m, m);
    if let Some(l) = linear {
        for i in 0..n {
            lmat[(0, i + 1)] = 0.5 * l[i];
            lmat[(i + 1, 0)] = 0.5 * l[i];
        }
    }
    let g_rhs = constraint_rhs(n, s);
    let ident = DMatrix::identity(m, m);

    let start = LiftedPoint::uniform(n, s);
    let mut w = start.lifted();
    let mut e = w.clone();
    let mut z = hadamard(&ct, &w) + &ident;
    let mut psi = DMatrix::zeros(m, m);
    let mut phi = DMatrix::zeros(m, m);
    let mut omega = DVector::zeros(2 * n + 2);
    let mut rho = opts.rho;

    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut best_residual = f64::INFINITY;
    let mut stall = 0usize;

    for it in 0..opts.max_iter {
        iterations = it + 1;

        // W step: normal equations of the three quadratic couplings
        let mut rhs = hadamard(&ct, &(&z - &ident + &psi)) + (&e - &phi) + &lmat / rho;
        constraint_adjoint(&(&g_rhs + &omega), s, &mut rhs);
        w = solve_w(&ct, s, &rhs, &w, opts.w_tol);

        // E step: PSD projection
        let e_old = e.clone();
        e = psd_project(&(&w + &phi));

        // Z step: per-eigenvalue prox of -ldet
        let z_old = z.clone();
        let marg = hadamard(&ct, &w) + &ident - &psi;
        z = logdet_prox(&marg, rho);

        // multipliers
        let r_z = &z - hadamard(&ct, &w) - &ident;
        let r_e = &w - &e;
        let r_g = &g_rhs - constraint_values(&w, s);
        psi += &r_z;
        phi += &r_e;
        omega += &r_g;

        let primal = (frob_dot(&r_z, &r_z) + frob_dot(&r_e, &r_e) + r_g.norm_squared()).sqrt();
        let de = &e - &e_old;
        let dz = &z - &z_old;
        let dual = rho * (frob_dot(&de, &de) + frob_dot(&dz, &dz)).sqrt();
        let residual = primal.max(dual);
        if residual <= opts.admm_tol {
            converged = true;
            break;
        }
        if residual < best_residual - 1e-14 {
            best_residual = residual;
            stall = 0;
        } else {
            stall += 1;
            if stall > 2000 && residual > 10.0 * best_residual {
                flags.push("diverged".to_string());
                break;
            }
        }
        if it % 50 == 49 {
            if primal > 10.0 * dual && rho < 1e6 {
                rho *= 2.0;
                psi /= 2.0;
                phi /= 2.0;
                omega /= 2.0;
            } else if dual > 10.0 * primal && rho > 1e-6 {
                rho /= 2.0;
                psi *= 2.0;
                phi *= 2.0;
                omega *= 2.0;
            }
        }
    }
    if !converged && !flags.iter().any(|f| f == "diverged") {
        flags.push("max-iterations".to_string());
    }

    // extract, project, repair, and evaluate at a feasible point
    let x_raw = DVector::from_fn(n, |i, _| w[(0, i + 1)]);
    let x_proj = project_capped_simplex(&x_raw, s);
    let xx_raw = DMatrix::from_fn(n, n, |i, j| w[(i + 1, j + 1)]);
    let lin_term = |x: &DVector<f64>| linear.map_or(0.0, |l| l.dot(x));

    // alternating projections between the PSD cone and the affine
    // constraint set to land on a genuinely feasible lifted point
    let feasible_point = (|| -> Option<LiftedPoint> {
        let mut x = x_proj.clone();
        let mut xx = repair_x(&x, &xx_raw, s).ok()?;
        for _ in 0..200 {
            let point = LiftedPoint { x: x.clone(), xx: xx.clone() };
            let wfix = point.lifted();
            let min_eig = SymmetricEigen::new(wfix.clone())
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig >= -PSD_TOL {
                return Some(point);
            }
            let proj = psd_project(&wfix);
            x = project_capped_simplex(&DVector::from_fn(n, |i, _| proj[(0, i + 1)]), s);
            xx = repair_x(&x, &DMatrix::from_fn(n, n, |i, j| proj[(i + 1, j + 1)]), s).ok()?;
        }
        None
    })();

    let mut value;
    let point_x;
    let mut lifted = None;
    match feasible_point.and_then(|p| {
        bqp_objective(&instance.c, &p, gamma, s).ok().map(|v| (p, v))
    }) {
        Some((point, v)) => {
            value = v + lin_term(&point.x);
            point_x = point.x.clone();
            lifted = Some(
                (0..n)
                    .map(|i| (0..n).map(|j| point.xx[(i, j)]).collect())
                    .collect::<Vec<Vec<f64>>>(),
            );
        }
        None => {
            value = ldet_psd(&z) - s as f64 * gamma.ln() + lin_term(&x_raw);
            point_x = x_raw.clone();
            flags.push("unverified relaxation value".to_string());
        }
    }
    value += instance.offset;

    let mut duals = BTreeMap::new();
    duals.insert("omega".to_string(), omega.iter().cloned().collect());
    Ok(BoundResult {
        name: "bqp".to_string(),
        value,
        x: point_x.iter().cloned().collect(),
        lifted,
        duals,
        iterations,
        converged,
        flags,
    })
}
