//! Instance representation, validation, and shared dense symmetric
//! linear-algebra primitives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::MespError;
use crate::Result;

/// Relative symmetry tolerance for input matrices.
pub const SYM_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_TOL * lambda_max(|C|)` fail the PSD check.
pub const PSD_TOL: f64 = 1e-8;
/// Relative eigenvalue cutoff for numerical rank.
pub const RANK_TOL: f64 = 1e-9;
/// Cholesky pivot threshold: a pivot at or below this means singular.
pub const SING_TOL: f64 = 1e-12;
/// Relative Frobenius tolerance for a factor F with F F^T = C.
pub const FACT_TOL: f64 = 1e-10;
/// Eigendecomposition reconstruction tolerance.
pub const EIG_TOL: f64 = 1e-8;

/// A MESP instance: covariance `C`, cardinality `s`, an optional factor
/// `F` with `C = F F^T`, and a value offset accumulated by reductions.
///
/// Indices are 0-based internally; all I/O is 1-based.
#[derive(Debug, Clone)]
pub struct Instance {
    pub c: DMatrix<f64>,
    pub s: usize,
    pub factor: Option<DMatrix<f64>>,
    pub offset: f64,
    pub label: String,
}

impl Instance {
    pub fn new(c: DMatrix<f64>, s: usize) -> Self {
        Instance { c, s, factor: None, offset: 0.0, label: String::new() }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// Numerical rank of `C` with the relative eigenvalue cutoff.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.c)
    }
}

/// A sorted subset of `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subset(Vec<usize>);

impl Subset {
    /// Builds a subset, sorting and checking for duplicates.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(MespError::InvalidInstance("duplicate subset index".into()));
        }
        Ok(Subset(indices))
    }

    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// 1-based view for reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&i| i + 1).collect()
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues non-increasing,
/// reused across prox and Gamma evaluations. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralCache {
    /// Decomposes a symmetric matrix (the strictly lower triangle is trusted
    /// to mirror the upper one) and sorts eigenpairs non-increasing.
    pub fn new(m: &DMatrix<f64>) -> Self {
        let se = m.clone().symmetric_eigen();
        let n = m.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (j, &i) in order.iter().enumerate() {
            eigenvectors.set_column(j, &se.eigenvectors.column(i));
        }
        SpectralCache { eigenvalues, eigenvectors }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.eigenvalues);
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }
}

/// Result of a bound computation: the bound value plus the relaxation
/// solution and convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundResult {
    pub name: String,
    pub value: f64,
    pub x: Vec<f64>,
    /// Lifted matrix for the BQP bound, row-major, when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifted: Option<Vec<Vec<f64>>>,
    /// Dual values by role, e.g. "upsilon", "nu", "tau" for the
    /// factorization bound certificate.
    pub duals: std::collections::BTreeMap<String, Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl BoundResult {
    pub fn new(name: impl Into<String>, value: f64, x: Vec<f64>) -> Self {
        BoundResult {
            name: name.into(),
            value,
            x,
            lifted: None,
            duals: std::collections::BTreeMap::new(),
            iterations: 0,
            converged: true,
            flags: Vec::new(),
        }
    }
}

/// Report-style validation outcome: all violated invariants, plus
/// borderline findings that pass but deserve a look.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every `Instance` invariant and reports each violation.
pub fn validate(instance: &Instance) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = instance.n();
    let c = &instance.c;

    if c.ncols() != n {
        report.violations.push(format!("C is {}x{}, not square", n, c.ncols()));
        return report;
    }
    if n < 2 {
        report.violations.push("order n must be at least 2".into());
        return report;
    }

    let scale = c.amax().max(1e-300);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    if asym > SYM_TOL * scale {
        report
            .violations
            .push(format!("C asymmetric: max |C_ij - C_ji| = {asym:.3e} over scale {scale:.3e}"));
    }

    let spec = SpectralCache::new(c);
    let lam_max = spec.eigenvalues[0].abs().max(spec.eigenvalues[n - 1].abs());
    let lam_min = spec.eigenvalues[n - 1];
    if lam_min < -PSD_TOL * lam_max {
        report.violations.push(format!("C not PSD: lambda_min = {lam_min:.6e}"));
    }

    if instance.s == 0 || instance.s >= n {
        report.violations.push(format!("cardinality s = {} violates 0 < s < n = {}", instance.s, n));
    }

    let rank = rank_from_eigenvalues(&spec.eigenvalues);
    if instance.s < n && rank < instance.s {
        report.violations.push(format!("rank(C) = {rank} < s = {}", instance.s));
    }
    // The rank assumption has no canonical tolerance; flag near-cutoff
    // eigenvalues instead of silently deciding.
    let cutoff = RANK_TOL * lam_max;
    for l in 0..n {
        let ev = spec.eigenvalues[l];
        if ev > 0.0 && ev > cutoff * 0.1 && ev < cutoff * 10.0 {
            report.warnings.push(format!(
                "eigenvalue {ev:.6e} is within a decade of the rank cutoff {cutoff:.6e}"
            ));
        }
    }

    if let Some(f) = &instance.factor {
        if f.nrows() != n {
            report.violations.push(format!("factor F has {} rows, expected {n}", f.nrows()));
        } else {
            let resid = (f * f.transpose() - c).norm() / c.norm().max(1e-300);
            if resid > FACT_TOL {
                report.violations.push(format!("||F F^T - C||_F / ||C||_F = {resid:.3e} > {FACT_TOL:.0e}"));
            }
            if f.ncols() < rank {
                report.violations.push(format!("factor width k = {} < rank(C) = {rank}", f.ncols()));
            }
        }
    }

    report
}

fn rank_from_eigenvalues(eigenvalues: &DVector<f64>) -> usize {
    let lam_max = eigenvalues.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    if lam_max == 0.0 {
        return 0;
    }
    eigenvalues.iter().filter(|&&ev| ev > RANK_TOL * lam_max).count()
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    rank_from_eigenvalues(&SpectralCache::new(m).eigenvalues)
}

/// Log-determinant of a symmetric PSD matrix via Cholesky, returning
/// `-inf` when any pivot falls at or below [`SING_TOL`].
pub fn ldet_psd(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut a = m.clone();
    let mut ldet = 0.0;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if d <= SING_TOL {
            return f64::NEG_INFINITY;
        }
        let l = d.sqrt();
        a[(j, j)] = l;
        ldet += d.ln();
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = v / l;
        }
    }
    ldet
}

/// Extracts the principal submatrix `m[rows, rows]`.
pub fn principal_submatrix(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let k = rows.len();
    DMatrix::from_fn(k, k, |i, j| m[(rows[i], rows[j])])
}

/// Log-determinant of `C[S, S]`; `-inf` when the submatrix is numerically
/// singular so that enumeration and branch-and-bound rank it last.
pub fn ldet_submatrix(instance: &Instance, subset: &Subset) -> Result<f64> {
    if subset.is_empty() {
        return Err(MespError::InvalidInstance("subset must be nonempty".into()));
    }
    let n = instance.n();
    for &i in subset.indices() {
        if i >= n {
            return Err(MespError::IndexOutOfRange { index: i, order: n });
        }
    }
    Ok(ldet_psd(&principal_submatrix(&instance.c, subset.indices())))
}

/// Returns the instance augmented with a factor `F` of width `k`, built
/// from the eigendecomposition with negative eigenvalues clipped to zero.
pub fn factorize(instance: &Instance, k: usize) -> Result<Instance> {
    let n = instance.n();
    let rank = instance.rank();
    if k < rank {
        return Err(MespError::InvalidInstance(format!(
            "factor width k = {k} below numerical rank {rank}"
        )));
    }
    if k > n {
        return Err(MespError::InvalidInstance(format!("factor width k = {k} exceeds n = {n}")));
    }
    let spec = SpectralCache::new(&instance.c);
    let mut f = DMatrix::zeros(n, k);
    for j in 0..k {
        let lam = spec.eigenvalues[j].max(0.0);
        let col = spec.eigenvectors.column(j) * lam.sqrt();
        f.set_column(j, &col);
    }
    let mut out = instance.clone();
    out.factor = Some(f);
    Ok(out)
}

/// A factor for bound computations: the stored one, or a fresh
/// eigen-based factor of width `rank(C)`.
pub fn factor_or_default(instance: &Instance) -> Result<DMatrix<f64>> {
    if let Some(f) = &instance.factor {
        return Ok(f.clone());
    }
    let k = instance.rank().max(instance.s).min(instance.n());
    Ok(factorize(instance, k)?.factor.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_pd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n + 2, |_, _| rng.gen_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn ldet_diagonal_case() {
        let inst = Instance::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0])), 2);
        let s = Subset::new(vec![0, 2]).unwrap();
        assert_relative_eq!(ldet_submatrix(&inst, &s).unwrap(), 2.0f64.ln() + 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn ldet_identity_case() {
        let inst = Instance::new(DMatrix::identity(5, 5), 2);
        let s = Subset::new(vec![1, 3, 4]).unwrap();
        assert_relative_eq!(ldet_submatrix(&inst, &s).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn ldet_matches_eigenvalues() {
        let c = random_pd(5, 7);
        let inst = Instance::new(c.clone(), 2);
        let s = Subset::new(vec![0, 2, 4]).unwrap();
        let sub = principal_submatrix(&c, s.indices());
        let expected: f64 = SpectralCache::new(&sub).eigenvalues.iter().map(|l| l.ln()).sum();
        assert_relative_eq!(ldet_submatrix(&inst, &s).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn ldet_singular_sentinel() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let inst = Instance::new(c, 1);
        let s = Subset::new(vec![0, 1]).unwrap();
        assert_eq!(ldet_submatrix(&inst, &s).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn ldet_out_of_range() {
        let inst = Instance::new(DMatrix::identity(3, 3), 1);
        let s = Subset::new(vec![0, 3]).unwrap();
        assert!(ldet_submatrix(&inst, &s).is_err());
    }

    #[test]
    fn ldet_permutation_invariant() {
        let c = random_pd(6, 3);
        let inst = Instance::new(c.clone(), 2);
        // permute rows/columns by a fixed permutation and compare
        let perm = [2usize, 0, 5, 1, 4, 3];
        let pc = DMatrix::from_fn(6, 6, |i, j| c[(perm[i], perm[j])]);
        let pinst = Instance::new(pc, 2);
        let s = Subset::new(vec![1, 3, 4]).unwrap();
        let mapped: Vec<usize> = s.indices().iter().map(|&i| perm[i]).collect();
        let ms = Subset::new(mapped).unwrap();
        assert_relative_eq!(
            ldet_submatrix(&inst, &ms).unwrap(),
            ldet_submatrix(&pinst, &s).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn validate_indefinite() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let rep = validate(&Instance::new(c, 1));
        assert!(rep.violations.iter().any(|v| v.contains("PSD")));
    }

    #[test]
    fn validate_cardinality() {
        let rep = validate(&Instance::new(DMatrix::identity(3, 3), 3));
        assert!(rep.violations.iter().any(|v| v.contains("cardinality")));
    }

    #[test]
    fn validate_rank_deficient() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let c = &v * v.transpose();
        let rep = validate(&Instance::new(c, 2));
        assert!(rep.violations.iter().any(|v| v.contains("rank")));
    }

    #[test]
    fn factorize_diagonal() {
        let inst = Instance::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 1);
        let out = factorize(&inst, 2).unwrap();
        let f = out.factor.unwrap();
        assert_relative_eq!((&f * f.transpose() - &inst.c).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn factorize_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = &g * g.transpose();
        let inst = Instance::new(c.clone(), 2);
        let out = factorize(&inst, 3).unwrap();
        let f = out.factor.unwrap();
        assert!((f.clone() * f.transpose() - &c).norm() <= 1e-9 * c.norm());
        assert!(factorize(&inst, 2).is_err());
    }

    #[test]
    fn spectral_cache_sorted_and_reconstructs() {
        let c = random_pd(7, 5);
        let spec = SpectralCache::new(&c);
        for i in 1..7 {
            assert!(spec.eigenvalues[i - 1] >= spec.eigenvalues[i]);
        }
        assert!((spec.reconstruct() - &c).norm() <= EIG_TOL * c.norm());
    }

    #[test]
    fn full_set_ldet_is_eigen_sum() {
        let c = random_pd(6, 9);
        let inst = Instance::new(c.clone(), 3);
        let s = Subset::new((0..6).collect()).unwrap();
        let expected: f64 = SpectralCache::new(&c).eigenvalues.iter().map(|l| l.ln()).sum();
        assert_relative_eq!(ldet_submatrix(&inst, &s).unwrap(), expected, epsilon = 1e-9);
    }
}
