//! Ground-truth solvers: exhaustive enumeration for small instances and a
//! polynomial dynamic program for tridiagonal covariance matrices.

use nalgebra::DMatrix;

use crate::error::MespError;
use crate::model::{ldet_psd, principal_submatrix, Instance, Subset, SYM_TOL};
use crate::Result;

/// Default cap on the number of enumerated subsets.
pub const DEFAULT_ENUM_CAP: u128 = 2_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k {
        out = out * (n - i) as u128 / (i + 1) as u128;
    }
    out
}

/// Exhaustive solution of the instance. Deterministic tie-break:
/// lexicographically smallest subset. The reported value includes the
/// instance offset so reduced instances stay comparable.
pub fn brute_force(instance: &Instance) -> Result<(f64, Subset)> {
    brute_force_with_cap(instance, DEFAULT_ENUM_CAP)
}

pub fn brute_force_with_cap(instance: &Instance, cap: u128) -> Result<(f64, Subset)> {
    let n = instance.n();
    let s = instance.s;
    if s == 0 || s > n {
        return Err(MespError::InvalidInstance(format!("s = {s} out of range for n = {n}")));
    }
    let total = binomial(n, s);
    if total > cap {
        return Err(MespError::CapExceeded { subsets: total, cap });
    }

    let mut best_val = f64::NEG_INFINITY;
    let mut best: Vec<usize> = (0..s).collect();
    let mut current: Vec<usize> = (0..s).collect();
    loop {
        let v = ldet_psd(&principal_submatrix(&instance.c, &current));
        if v > best_val {
            best_val = v;
            best = current.clone();
        }
        // next combination in lexicographic order
        let mut i = s;
        loop {
            if i == 0 {
                return Ok((best_val + instance.offset, Subset::new(best)?));
            }
            i -= 1;
            if current[i] < n - (s - i) {
                current[i] += 1;
                for j in (i + 1)..s {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Determinant of the symmetric tridiagonal matrix with diagonal `a` and
/// off-diagonal `b`, by the three-term recursion with `det T_0 = 1`.
pub fn tridiag_det(a: &[f64], b: &[f64]) -> f64 {
    assert!(b.len() + 1 == a.len() || a.is_empty());
    let mut prev2 = 1.0; // det T_0
    let mut prev1 = 1.0;
    for (r, &ar) in a.iter().enumerate() {
        let det = if r == 0 { ar } else { ar * prev1 - b[r - 1] * b[r - 1] * prev2 };
        prev2 = prev1;
        prev1 = det;
    }
    prev1
}

fn tridiagonal_bands(c: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = c.nrows();
    let scale = c.amax().max(1e-300);
    for i in 0..n {
        for j in (i + 2)..n {
            if c[(i, j)].abs() > SYM_TOL * scale {
                return Err(MespError::NotTridiagonal);
            }
        }
    }
    let a: Vec<f64> = (0..n).map(|i| c[(i, i)]).collect();
    let b: Vec<f64> = (0..n - 1).map(|i| c[(i, i + 1)]).collect();
    Ok((a, b))
}

/// Log-determinant of the contiguous block `[k, l]` of a tridiagonal
/// matrix; `-inf` for nonpositive determinants.
fn ldet_block(a: &[f64], b: &[f64], k: usize, l: usize) -> f64 {
    let det = tridiag_det(&a[k..=l], &b[k..l.max(k)]);
    if det <= 0.0 {
        f64::NEG_INFINITY
    } else {
        det.ln()
    }
}

/// Exact solution for tridiagonal `C` by dynamic programming over the
/// last contiguous piece of the chosen subset.
///
/// `f(k, l, t)` is the best log-determinant over subsets of cardinality
/// `t` whose last piece is the interval `[k, l]`; pieces are separated by
/// at least one skipped index, so a predecessor piece ends at or before
/// `k - 2`. Cells are filled for `t = 1..s` with a running maximum over
/// predecessor end positions, which leaves values identical to the plain
/// double loop.
pub fn solve_tridiagonal(instance: &Instance) -> Result<(f64, Subset)> {
    let n = instance.n();
    let s = instance.s;
    let (a, b) = tridiagonal_bands(&instance.c)?;

    // piece log-determinants, indexed [k][l - k]
    let mut piece = vec![Vec::new(); n];
    for k in 0..n {
        for l in k..n.min(k + s) {
            piece[k].push(ldet_block(&a, &b, k, l));
        }
    }

    let neg = f64::NEG_INFINITY;
    let idx = |k: usize, l: usize| -> usize { k * n + l };
    // f[t - 1][k * n + l], with backpointer to the predecessor (i, j)
    let mut f = vec![vec![neg; n * n]; s];
    let mut back: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; n * n]; s];
    // best[t - 1][j] = (value, (i*, j*)) over cells with end <= j
    let mut best = vec![vec![(neg, (0usize, 0usize)); n]; s];

    for t in 1..=s {
        for k in 0..n {
            for l in k..n {
                let len = l - k + 1;
                if len > t {
                    break;
                }
                let pl = piece[k][l - k];
                let val = if len == t {
                    pl
                } else {
                    let tp = t - len;
                    if k < 2 {
                        continue;
                    }
                    let (pv, parg) = best[tp - 1][k - 2];
                    if pv == neg {
                        continue;
                    }
                    back[t - 1][idx(k, l)] = Some(parg);
                    pl + pv
                };
                f[t - 1][idx(k, l)] = val;
            }
        }
        // running max over end position j, smallest (i, j) wins ties
        let mut run = (neg, (0usize, 0usize));
        for j in 0..n {
            for i in 0..=j {
                let v = f[t - 1][idx(i, j)];
                if v > run.0 {
                    run = (v, (i, j));
                }
            }
            best[t - 1][j] = run;
        }
    }

    let mut best_val = neg;
    let mut best_cell = None;
    for k in 0..n {
        for l in k..n {
            if l - k + 1 > s {
                break;
            }
            let v = f[s - 1][idx(k, l)];
            if v > best_val {
                best_val = v;
                best_cell = Some((k, l));
            }
        }
    }

    let Some(mut cell) = best_cell else {
        return Ok((neg, Subset::empty()));
    };

    let mut indices = Vec::with_capacity(s);
    let mut t = s;
    loop {
        let (k, l) = cell;
        indices.extend(k..=l);
        let len = l - k + 1;
        match back[t - 1][idx(k, l)] {
            Some(prev) => {
                t -= len;
                cell = prev;
            }
            None => break,
        }
    }
    Ok((best_val + instance.offset, Subset::new(indices)?))
}

/// Searches for a symmetric permutation making `C` tridiagonal: the
/// support graph must decompose into simple paths (maximum degree two,
/// no cycles). Returns the vertex ordering, or `None`.
pub fn detect_tridiagonal_permutation(c: &DMatrix<f64>) -> Option<Vec<usize>> {
    let n = c.nrows();
    let scale = c.amax().max(1e-300);
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if c[(i, j)].abs() > SYM_TOL * scale {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    if adj.iter().any(|a| a.len() > 2) {
        return None;
    }

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    // walk each component from an endpoint; a component with no endpoint
    // of degree <= 1 is a cycle
    for start in 0..n {
        if visited[start] || adj[start].len() > 1 {
            continue;
        }
        let mut prev = usize::MAX;
        let mut cur = start;
        loop {
            visited[cur] = true;
            order.push(cur);
            match adj[cur].iter().find(|&&nb| nb != prev && !visited[nb]) {
                Some(&next) => {
                    prev = cur;
                    cur = next;
                }
                None => break,
            }
        }
    }
    if order.len() != n {
        return None; // leftover vertices sit on cycles
    }
    Some(order)
}

/// Applies a vertex ordering: entry `(i, j)` of the result is
/// `C[order[i], order[j]]`.
pub fn permute_symmetric(c: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    let n = c.nrows();
    DMatrix::from_fn(n, n, |i, j| c[(order[i], order[j])])
}
