//! The Gamma function underlying the factorization bound: the
//! water-filling index, the concave spectral function, and the dual
//! matrix built from its supergradient.
//!
//! A shift parameter generalizes every formula: with shift `0` this is
//! the plain factorization-bound machinery, with shift `lambda > 0` it is
//! the augmented variant that evaluates `log(eigenvalue + lambda)` on the
//! spectrum of the shifted covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::MespError;
use crate::model::SpectralCache;
use crate::Result;

/// Default epsilon for dual eigenvalues beyond the numerical rank.
pub const EPS_RANK: f64 = 1e-8;
/// Relative cutoff separating zero eigenvalues from positive ones.
const SPEC_RANK_TOL: f64 = 1e-12;

/// Evaluation record of the Gamma function at one spectrum.
#[derive(Debug, Clone)]
pub struct GammaEval {
    /// The unique water-filling index, `0 <= iota < s`.
    pub iota: usize,
    /// Tail average `(1/(s - iota)) * sum_{l > iota} lambda_l`.
    pub delta: f64,
    /// Function value; `-inf` when the tail average (plus shift) vanishes.
    pub value: f64,
    /// The input spectrum, non-increasing and nonnegative.
    pub lambda: Vec<f64>,
    /// Spectral shift (zero for the plain bound).
    pub shift: f64,
}

/// The unique index `i` in `[0, s)` with
/// `lambda_i > (1/(s-i)) * sum_{l>i} lambda_l >= lambda_{i+1}`,
/// reading `lambda_0 = +inf`. Found by linear scan.
pub fn find_iota(lambda: &[f64], s: usize) -> Result<usize> {
    let k = lambda.len();
    if s == 0 || s > k {
        return Err(MespError::InvalidInstance(format!("s = {s} out of range for k = {k}")));
    }
    let total: f64 = lambda.iter().sum();
    if total <= 0.0 {
        return Err(MespError::Numerical("all-zero spectrum".into()));
    }
    let mut tail = total;
    for i in 0..s {
        // tail = sum_{l > i} lambda_l (1-based l), i.e. lambda[i..]
        let delta = tail / (s - i) as f64;
        let head = if i == 0 { f64::INFINITY } else { lambda[i - 1] };
        let next = if i < k { lambda[i] } else { 0.0 };
        if head > delta && delta >= next {
            return Ok(i);
        }
        tail -= lambda[i];
    }
    // Lemma-level uniqueness guarantees we never get here for valid input;
    // fall back to the last index against round-off.
    Ok(s - 1)
}

/// Evaluates the (shifted) Gamma function on a nonnegative non-increasing
/// spectrum.
pub fn gamma_spectrum(lambda: &[f64], s: usize, shift: f64) -> Result<GammaEval> {
    let iota = find_iota(lambda, s)?;
    let tail: f64 = lambda[iota..].iter().sum();
    let delta = tail / (s - iota) as f64;
    let value = if delta + shift <= 0.0 {
        f64::NEG_INFINITY
    } else {
        lambda[..iota].iter().map(|&l| (l + shift).ln()).sum::<f64>()
            + (s - iota) as f64 * (delta + shift).ln()
    };
    Ok(GammaEval { iota, delta, value, lambda: lambda.to_vec(), shift })
}

fn clipped_spectrum(spec: &SpectralCache) -> Vec<f64> {
    let top = spec.eigenvalues[0].max(0.0);
    spec.eigenvalues
        .iter()
        .map(|&l| if l > SPEC_RANK_TOL * top.max(1e-300) { l } else { 0.0 })
        .collect()
}

/// Gamma of a symmetric PSD matrix.
pub fn gamma_value(x: &DMatrix<f64>, s: usize) -> Result<GammaEval> {
    gamma_value_shifted(x, s, 0.0)
}

pub fn gamma_value_shifted(x: &DMatrix<f64>, s: usize, shift: f64) -> Result<GammaEval> {
    let spec = SpectralCache::new(x);
    gamma_spectrum(&clipped_spectrum(&spec), s, shift)
}

/// Dual eigenvalues for the supergradient matrix: inverse head
/// eigenvalues, inverse tail average up to the numerical rank, and an
/// `(1 + eps)` bump past it.
pub fn dual_beta(lambda: &[f64], s: usize, shift: f64, eps: f64) -> Result<Vec<f64>> {
    let k = lambda.len();
    let iota = find_iota(lambda, s)?;
    let tail: f64 = lambda[iota..].iter().sum();
    let delta = tail / (s - iota) as f64;
    if delta + shift <= 0.0 {
        return Err(MespError::Numerical("tail average vanishes; dual undefined".into()));
    }
    let rank = lambda.iter().filter(|&&l| l > 0.0).count();
    let mut beta = Vec::with_capacity(k);
    for (idx, &l) in lambda.iter().enumerate() {
        let b = if idx < iota {
            1.0 / (l + shift)
        } else if idx < rank {
            1.0 / (delta + shift)
        } else {
            (1.0 + eps) / (delta + shift)
        };
        beta.push(b);
    }
    Ok(beta)
}

/// The dual matrix `Theta = U diag(beta) U^T` for the decomposition
/// `X = U diag(lambda) U^T` of `F^T Diag(x) F`.
pub fn dual_theta_from_spectral(spec: &SpectralCache, s: usize, shift: f64, eps: f64) -> Result<DMatrix<f64>> {
    let lambda = clipped_spectrum(spec);
    let beta = dual_beta(&lambda, s, shift, eps)?;
    let d = DMatrix::from_diagonal(&DVector::from_vec(beta));
    Ok(&spec.eigenvectors * d * spec.eigenvectors.transpose())
}

/// `F^T Diag(x) F`.
pub fn weighted_gram(f: &DMatrix<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let k = f.ncols();
    let n = f.nrows();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..n {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        let row = f.row(i);
        for a in 0..k {
            for b in a..k {
                let v = xi * row[a] * row[b];
                out[(a, b)] += v;
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// `diag(F Theta F^T)`, the supergradient of Gamma in `x`.
pub fn supergradient(f: &DMatrix<f64>, theta: &DMatrix<f64>) -> DVector<f64> {
    let n = f.nrows();
    DVector::from_fn(n, |i, _| {
        let row = f.row(i);
        (row * theta * row.transpose())[(0, 0)]
    })
}
