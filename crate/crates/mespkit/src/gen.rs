//! Seeded, reproducible instance generators.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::MespError;
use crate::model::Instance;
use crate::Result;

pub fn diag_instance(diag: &[f64], s: usize) -> Instance {
    Instance::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)), s)
        .with_label("diag")
}

/// Gram matrix of Gaussian factors plus a small ridge; `cond_ridge`
/// controls conditioning (larger ridge, tamer spectrum).
pub fn randpd(n: usize, seed: u64, cond_ridge: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n + 2, |_, _| rng.gen_range(-1.0..1.0));
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * cond_ridge
}

pub fn randpd_instance(n: usize, s: usize, seed: u64) -> Instance {
    Instance::new(randpd(n, seed, 0.2), s).with_label(format!("randpd-n{n}-s{s}-seed{seed}"))
}

/// Diagonally dominant tridiagonal PD matrix.
pub fn tridiag_instance(n: usize, s: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-0.9..0.9)).collect();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        let left = if i > 0 { b[i - 1].abs() } else { 0.0 };
        let right = if i < n - 1 { b[i].abs() } else { 0.0 };
        c[(i, i)] = left + right + rng.gen_range(0.2..2.0);
        if i < n - 1 {
            c[(i, i + 1)] = b[i];
            c[(i + 1, i)] = b[i];
        }
    }
    Instance::new(c, s).with_label(format!("tridiag-n{n}-s{s}-seed{seed}"))
}

/// Rank-`r` Gram matrix.
pub fn lowrank_instance(n: usize, s: usize, r: usize, seed: u64) -> Result<Instance> {
    if r < s {
        return Err(MespError::InvalidInstance(format!(
            "lowrank rank {r} below cardinality {s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
    let c = &g * g.transpose();
    Ok(Instance::new(c, s).with_label(format!("lowrank-n{n}-s{s}-r{r}-seed{seed}")))
}

/// Gaussian design matrix with full column rank enforced.
pub fn dopt_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        if a.clone().svd(false, false).rank(1e-9) == m {
            return a;
        }
    }
}

/// Random correlation matrix: normalized Gram of Gaussian rows.
pub fn random_correlation(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: DMatrix<f64> = DMatrix::from_fn(n, n + 3, |_, _| rng.gen_range(-1.0..1.0));
    let gram = &g * g.transpose();
    let d: Vec<f64> = (0..n).map(|i| gram[(i, i)].sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| gram[(i, j)] / (d[i] * d[j]))
}
