//! The capped simplex `{x : e^T x = s, 0 <= x <= 1}` and related helpers.

use nalgebra::DVector;

const PROJ_TOL: f64 = 1e-12;

/// Euclidean projection onto the capped simplex by bisection on the dual
/// variable of the budget constraint: `x_i = clamp(y_i - t, 0, 1)` with
/// `t` chosen so the coordinates sum to `s`.
pub fn project_capped_simplex(y: &DVector<f64>, s: usize) -> DVector<f64> {
    let n = y.len();
    debug_assert!(s <= n);
    let sum_at = |t: f64| -> f64 { y.iter().map(|&yi| (yi - t).clamp(0.0, 1.0)).sum() };
    let mut lo = y.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let target = s as f64;
    // sum_at is nonincreasing in t; bracket then bisect.
    for _ in 0..200 {
        if hi - lo <= PROJ_TOL * (1.0 + hi.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let mut x = DVector::from_iterator(n, y.iter().map(|&yi| (yi - t).clamp(0.0, 1.0)));
    // tiny residual spread over free coordinates keeps e^T x = s exact
    let resid = target - x.iter().sum::<f64>();
    if resid.abs() > 0.0 {
        let free: Vec<usize> =
            (0..n).filter(|&i| x[i] > PROJ_TOL && x[i] < 1.0 - PROJ_TOL).collect();
        if !free.is_empty() {
            let share = resid / free.len() as f64;
            for i in free {
                x[i] = (x[i] + share).clamp(0.0, 1.0);
            }
        }
    }
    x
}

/// Indices of the `s` largest entries of `d` (ties to lower index).
pub fn top_s_indices(d: &DVector<f64>, s: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap().then(a.cmp(&b)));
    let mut top: Vec<usize> = order.into_iter().take(s).collect();
    top.sort_unstable();
    top
}

/// 0/1 indicator vector of a set of indices.
pub fn indicator(n: usize, indices: &[usize]) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    for &i in indices {
        x[i] = 1.0;
    }
    x
}

/// True when `x` lies in the capped simplex within `tol`.
pub fn is_feasible(x: &DVector<f64>, s: usize, tol: f64) -> bool {
    x.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
        && (x.iter().sum::<f64>() - s as f64).abs() <= tol * (s as f64).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_is_feasible_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..50 {
            let n = rng.gen_range(2..12);
            let s = rng.gen_range(1..n);
            let y = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let x = project_capped_simplex(&y, s);
            assert!(is_feasible(&x, s, 1e-9), "trial {trial}");
            let again = project_capped_simplex(&x, s);
            assert!((again - &x).amax() <= 1e-8);
        }
    }

    #[test]
    fn projection_fixed_point_for_feasible_input() {
        let x = DVector::from_vec(vec![1.0, 0.5, 0.5, 0.0]);
        let p = project_capped_simplex(&x, 2);
        assert!((p - &x).amax() <= 1e-10);
    }

    #[test]
    fn projection_minimizes_distance() {
        // brute-force check on a small grid against random candidates
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = DVector::from_vec(vec![0.9, 0.2, -0.4, 1.7]);
        let s = 2;
        let x = project_capped_simplex(&y, s);
        let d0 = (&x - &y).norm_squared();
        for _ in 0..2000 {
            let cand = project_capped_simplex(
                &DVector::from_fn(4, |_, _| rng.gen_range(-1.0..2.0)),
                s,
            );
            assert!(d0 <= (cand - &y).norm_squared() + 1e-9);
        }
    }

    #[test]
    fn top_s_ties_to_lower_index() {
        let d = DVector::from_vec(vec![1.0, 2.0, 2.0, 0.5]);
        assert_eq!(top_s_indices(&d, 2), vec![1, 2]);
        assert_eq!(top_s_indices(&d, 3), vec![0, 1, 2]);
    }

    #[test]
    fn budget_exact() {
        let y = DVector::from_vec(vec![10.0, 9.0, -5.0, 0.3, 0.4]);
        let x = project_capped_simplex(&y, 3);
        assert_relative_eq!(x.iter().sum::<f64>(), 3.0, epsilon = 1e-10);
    }
}
