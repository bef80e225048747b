//! Problem transformations: complementation, the two-way correspondence
//! with 0/1 D-optimal design, and the data-fusion form.

use nalgebra::DMatrix;

use crate::error::MespError;
use crate::model::{ldet_psd, numerical_rank, Instance, SpectralCache, SING_TOL};
use crate::Result;

pub const EQ_TOL: f64 = 1e-8;

/// 0/1 D-optimal design data: choose `s` rows of `a` maximizing
/// `ldet(A[S,:]ᵀ A[S,:])`; `offset` makes values comparable across
/// transformations.
#[derive(Debug, Clone)]
pub struct DoptInstance {
    pub a: DMatrix<f64>,
    pub s: usize,
    pub offset: f64,
}

/// Data-fusion design data: choose `s` rows of `a` maximizing
/// `ldet(B + A[S,:]ᵀ A[S,:])`, with `B` the information already in hand.
#[derive(Debug, Clone)]
pub struct DdfInstance {
    pub b: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub s: usize,
    pub offset: f64,
}

impl DoptInstance {
    pub fn value(&self, subset: &[usize]) -> f64 {
        let rows: Vec<usize> = subset.to_vec();
        let sub = self.a.select_rows(rows.iter());
        ldet_psd(&(sub.transpose() * sub)) + self.offset
    }

    /// Exhaustive optimum; small instances only.
    pub fn brute_force(&self) -> (f64, Vec<usize>) {
        brute_subsets(self.a.nrows(), self.s, |sub| self.value(sub))
    }
}

impl DdfInstance {
    pub fn value(&self, subset: &[usize]) -> f64 {
        let sub = self.a.select_rows(subset.iter());
        ldet_psd(&(&self.b + sub.transpose() * sub)) + self.offset
    }

    pub fn brute_force(&self) -> (f64, Vec<usize>) {
        brute_subsets(self.a.nrows(), self.s, |sub| self.value(sub))
    }
}

fn brute_subsets(n: usize, s: usize, value: impl Fn(&[usize]) -> f64) -> (f64, Vec<usize>) {
    use itertools::Itertools;
    let mut best = f64::NEG_INFINITY;
    let mut best_sub = Vec::new();
    for combo in (0..n).combinations(s) {
        let v = value(&combo);
        if v > best {
            best = v;
            best_sub = combo;
        }
    }
    (best, best_sub)
}

/// Deterministic eigenvector orientation: first entry of magnitude above
/// 1e-12 made positive.
fn orient_columns(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let lead = (0..m.nrows()).find(|&i| m[(i, j)].abs() > 1e-12);
        if let Some(i) = lead {
            if m[(i, j)] < 0.0 {
                for k in 0..m.nrows() {
                    m[(k, j)] = -m[(k, j)];
                }
            }
        }
    }
}

/// Complement: `C -> C^{-1}`, `s -> n-s`, offset grows by `ldet C`, so
/// optimal values agree after offsets.
pub fn to_complementary(instance: &Instance) -> Result<Instance> {
    let n = instance.n();
    let spec = SpectralCache::new(&instance.c);
    let min_eig = spec.eigenvalues[n - 1];
    if min_eig <= SING_TOL {
        return Err(MespError::Numerical(format!(
            "matrix is singular (min eigenvalue {min_eig:.3e}); no complement"
        )));
    }
    let inv_vals = spec.eigenvalues.map(|l| 1.0 / l);
    let cinv = &spec.eigenvectors * DMatrix::from_diagonal(&inv_vals) * spec.eigenvectors.transpose();
    let cinv = (&cinv + cinv.transpose()) / 2.0;
    let ldet: f64 = spec.eigenvalues.iter().map(|l| l.ln()).sum();
    let mut out = Instance::new(cinv, n - instance.s)
        .with_label(format!("{}-complement", instance.label));
    out.offset = instance.offset + ldet;
    Ok(out)
}

/// Design-to-selection transformation: with the thin SVD `A = U S Vᵀ`,
/// choosing `s` rows of `A` corresponds to leaving out the complementary
/// `n-s` rows, captured by the projector `I - UUᵀ`.
pub fn dopt_to_mesp(d: &DoptInstance) -> Result<Instance> {
    let n = d.a.nrows();
    let m = d.a.ncols();
    if d.s < m || d.s > n {
        return Err(MespError::InvalidInstance(format!(
            "cardinality {} outside [{m}, {n}]",
            d.s
        )));
    }
    let svd = d.a.clone().svd(true, false);
    let sigma = &svd.singular_values;
    if sigma.iter().any(|&v| v <= 1e-9 * sigma.max()) {
        return Err(MespError::InvalidInstance(
            "design matrix is rank deficient".into(),
        ));
    }
    let u = svd.u.as_ref().unwrap().columns(0, m).into_owned();
    let c = DMatrix::identity(n, n) - &u * u.transpose();
    let c = (&c + c.transpose()) / 2.0;
    if numerical_rank(&c) != n - m {
        return Err(MespError::Numerical(format!(
            "projector rank {} differs from {}",
            numerical_rank(&c),
            n - m
        )));
    }
    let offset: f64 = 2.0 * sigma.iter().map(|v| v.ln()).sum::<f64>();
    let mut out = Instance::new(c, n - d.s).with_label("dopt-as-selection");
    out.offset = d.offset + offset;
    Ok(out)
}

/// Inverse direction, available when every positive eigenvalue of `C`
/// equals the largest: the null-space basis of `C` becomes the design
/// matrix, with cardinality `n - s`.
pub fn mesp_to_dopt(instance: &Instance) -> Result<DoptInstance> {
    let n = instance.n();
    let spec = SpectralCache::new(&instance.c);
    let lambda1 = spec.eigenvalues[0];
    if lambda1 <= SING_TOL {
        return Err(MespError::InvalidInstance("zero matrix".into()));
    }
    let rank_tol = lambda1 * 1e-9;
    let rank = spec.eigenvalues.iter().filter(|&&l| l > rank_tol).count();
    for &l in spec.eigenvalues.iter().take(rank) {
        if (l - lambda1).abs() > EQ_TOL * lambda1 {
            return Err(MespError::InvalidInstance(format!(
                "positive eigenvalues not all equal: {l} vs {lambda1}"
            )));
        }
    }
    let m = n - rank;
    if n - instance.s < m {
        return Err(MespError::InvalidInstance(format!(
            "design cardinality {} below column count {m}",
            n - instance.s
        )));
    }
    // null-space eigenvectors of C = eigenvalue-1 eigenvectors of I - C/lambda1
    let mut u = spec.eigenvectors.columns(rank, m).into_owned();
    orient_columns(&mut u);
    let gram = u.transpose() * &u;
    let err = (&gram - DMatrix::identity(m, m)).abs().max();
    if err > 1e-10 {
        return Err(MespError::Numerical(format!(
            "null-space basis not orthonormal (error {err:.3e})"
        )));
    }
    Ok(DoptInstance {
        a: u,
        s: n - instance.s,
        offset: instance.offset + instance.s as f64 * lambda1.ln(),
    })
}

/// Data-fusion form for PD `C`: factor `(1/lambda_min) C - I = WᵀW`;
/// then `ldet C[S,S] = ldet(I + W Diag(x) Wᵀ) + s log lambda_min` for
/// every selection.
pub fn mesp_to_ddf(instance: &Instance) -> Result<DdfInstance> {
    let n = instance.n();
    let spec = SpectralCache::new(&instance.c);
    let lambda_n = spec.eigenvalues[n - 1];
    if lambda_n <= SING_TOL {
        return Err(MespError::Numerical(
            "matrix must be positive definite for the data-fusion form".into(),
        ));
    }
    let shifted = spec.eigenvalues.map(|l| (l / lambda_n - 1.0).max(0.0));
    let mut vecs = spec.eigenvectors.clone();
    orient_columns(&mut vecs);
    // W = Diag(sqrt(mu)) Qᵀ so that WᵀW = Q Diag(mu) Qᵀ
    let w = DMatrix::from_diagonal(&shifted.map(f64::sqrt)) * vecs.transpose();
    Ok(DdfInstance {
        b: DMatrix::identity(n, n),
        a: w.transpose(),
        s: instance.s,
        offset: instance.offset + instance.s as f64 * lambda_n.ln(),
    })
}

/// Null-space completion helper used by tests: value of a selection in
/// the design problem produced by [`mesp_to_dopt`] corresponds to the
/// complementary selection in the original problem.
pub fn complement_subset(n: usize, subset: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; n];
    for &i in subset {
        mark[i] = true;
    }
    (0..n).filter(|&i| !mark[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::brute_force;
    use crate::gen::{dopt_matrix, randpd_instance};
    use crate::model::{ldet_submatrix, Subset};
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;
    use nalgebra::DVector;

    #[test]
    fn complementary_round_trip() {
        let inst = randpd_instance(7, 3, 1);
        let twice = to_complementary(&to_complementary(&inst).unwrap()).unwrap();
        assert_eq!(twice.s, inst.s);
        assert!((&twice.c - &inst.c).abs().max() <= 1e-10);
        assert_abs_diff_eq!(twice.offset, inst.offset, epsilon = 1e-10);
    }

    #[test]
    fn complementary_hand_example() {
        let inst = crate::gen::diag_instance(&[2.0, 3.0, 4.0], 1);
        let comp = to_complementary(&inst).unwrap();
        assert_eq!(comp.s, 2);
        let (zc, _) = brute_force(&comp).unwrap();
        // complement optimum log(1/6) plus offset log 24 gives log 4
        assert_abs_diff_eq!(zc, 4.0f64.ln(), epsilon = 1e-10);
        let (z, _) = brute_force(&inst).unwrap();
        assert_abs_diff_eq!(z, zc, epsilon = 1e-10);
    }

    #[test]
    fn complementary_brute_force_agreement() {
        for seed in [2u64, 8, 17] {
            let inst = randpd_instance(9, 4, seed);
            let comp = to_complementary(&inst).unwrap();
            let (z, _) = brute_force(&inst).unwrap();
            let (zc, _) = brute_force(&comp).unwrap();
            assert_abs_diff_eq!(z, zc, epsilon = 1e-9);
        }
    }

    #[test]
    fn complementary_rejects_singular() {
        let inst = crate::gen::lowrank_instance(6, 2, 3, 0).unwrap();
        assert!(to_complementary(&inst).is_err());
    }

    #[test]
    fn dopt_orthonormal_columns_zero_offset() {
        let mut a = DMatrix::zeros(5, 2);
        a[(0, 0)] = 1.0;
        a[(3, 1)] = 1.0;
        let d = DoptInstance { a, s: 2, offset: 0.0 };
        let inst = dopt_to_mesp(&d).unwrap();
        assert_abs_diff_eq!(inst.offset, 0.0, epsilon = 1e-12);
        assert_eq!(inst.s, 3);
    }

    #[test]
    fn dopt_per_subset_identity() {
        let a = dopt_matrix(6, 2, 3);
        let d = DoptInstance { a, s: 3, offset: 0.0 };
        let inst = dopt_to_mesp(&d).unwrap();
        for combo in (0..6).combinations(3) {
            let dv = d.value(&combo);
            let comp = complement_subset(6, &combo);
            let mv = ldet_submatrix(&inst, &Subset::new(comp).unwrap()).unwrap();
            assert_abs_diff_eq!(dv, mv + inst.offset, epsilon = 1e-9);
        }
    }

    #[test]
    fn dopt_optima_match() {
        for seed in [0u64, 5] {
            let a = dopt_matrix(7, 3, seed);
            let d = DoptInstance { a, s: 4, offset: 0.0 };
            let inst = dopt_to_mesp(&d).unwrap();
            let (zd, _) = d.brute_force();
            let (zm, _) = brute_force(&inst).unwrap();
            assert_abs_diff_eq!(zd, zm, epsilon = 1e-9);
        }
    }

    #[test]
    fn projector_instance_recovers_direction() {
        let n = 6;
        let p = DVector::from_fn(n, |i, _| (i + 1) as f64);
        let proj = DMatrix::identity(n, n) - &p * p.transpose() / p.norm_squared();
        let lambda = 1.7;
        let inst = Instance::new(lambda * proj, 3);
        let d = mesp_to_dopt(&inst).unwrap();
        assert_eq!(d.a.ncols(), 1);
        let unit = &p / p.norm();
        assert!((d.a.column(0).into_owned() - unit).norm() <= 1e-9);
    }

    #[test]
    fn mesp_to_dopt_brute_correspondence() {
        let n = 8;
        let mut g = crate::gen::dopt_matrix(n, 2, 9);
        // projector with equal positive eigenvalues
        let svd = g.clone().svd(true, false);
        g = svd.u.unwrap().columns(0, 2).into_owned();
        let c = DMatrix::identity(n, n) - &g * g.transpose();
        let inst = Instance::new(2.5 * c, 4);
        let d = mesp_to_dopt(&inst).unwrap();
        let (z, _) = brute_force(&inst).unwrap();
        let (zd, _) = d.brute_force();
        assert_abs_diff_eq!(z, zd, epsilon = 1e-9);
    }

    #[test]
    fn mesp_to_dopt_rejects_uneven_spectrum() {
        let inst = randpd_instance(6, 2, 4);
        assert!(mesp_to_dopt(&inst).is_err());
    }

    #[test]
    fn ddf_scalar_multiple_of_identity() {
        let lambda: f64 = 2.3;
        let inst = Instance::new(lambda * DMatrix::identity(5, 5), 2);
        let d = mesp_to_ddf(&inst).unwrap();
        assert!(d.a.abs().max() <= 1e-9);
        assert_abs_diff_eq!(d.value(&[0, 3]), 2.0 * lambda.ln(), epsilon = 1e-10);
    }

    #[test]
    fn ddf_per_subset_identity() {
        let inst = randpd_instance(7, 3, 6);
        let d = mesp_to_ddf(&inst).unwrap();
        for combo in (0..7).combinations(3) {
            let mv = ldet_submatrix(&inst, &Subset::new(combo.clone()).unwrap()).unwrap();
            assert_abs_diff_eq!(d.value(&combo), mv, epsilon = 1e-9);
        }
    }

    #[test]
    fn ddf_optima_correspondence() {
        let inst = randpd_instance(7, 3, 10);
        let d = mesp_to_ddf(&inst).unwrap();
        let (z, subset) = brute_force(&inst).unwrap();
        let (zd, sub_d) = d.brute_force();
        assert_abs_diff_eq!(z, zd, epsilon = 1e-9);
        assert_eq!(subset.indices(), &sub_d[..]);
    }
}
