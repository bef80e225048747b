//! mespkit: a toolkit for the maximum-entropy sampling problem (MESP).
//!
//! Given a symmetric positive semidefinite covariance matrix `C` of order `n`
//! and a cardinality `0 < s < n`, MESP asks for the size-`s` principal
//! submatrix of `C` with maximum log-determinant. The toolkit provides:
//!
//! - exact solvers: exhaustive enumeration and a polynomial dynamic program
//!   for tridiagonal covariance matrices ([`exact`]);
//! - three convex upper bounds: the linx bound ([`linx`]), the factorization
//!   bound with its dual certificate machinery ([`fact`]), and the lifted
//!   BQP bound ([`bqp`]), each with first-order and/or ADMM solvers;
//! - bound-improvement layers: ordinary and generalized diagonal scaling,
//!   and masking by correlation matrices ([`scaling`]);
//! - duality-based variable fixing and a branch-and-bound driver ([`bnb`]);
//! - reductions between MESP, 0/1 D-optimal design, and D-optimal data
//!   fusion ([`reduce`]);
//! - Matrix Market / CSV instance I/O and JSON reports ([`io`]).

pub mod bnb;
pub mod bqp;
pub mod error;
pub mod exact;
pub mod fact;
pub mod gamma;
pub mod gen;
pub mod io;
pub mod linx;
pub mod model;
pub mod reduce;
pub mod scaling;
pub mod simplex;

pub use error::MespError;
pub use model::{BoundResult, Instance, SpectralCache, Subset, ValidationReport};

pub type Result<T> = std::result::Result<T, MespError>;
