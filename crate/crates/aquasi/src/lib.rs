//! Numerical toolkit for A-quasiconvexity: constant-rank differential
//! operators and their symbols, spectral projections onto A-free fields,
//! quasiconvex envelope bounds and empirical Young-measure diagnostics.

pub mod envelope;
pub mod field;
pub mod integrand;
pub mod operator;
pub mod pinv;
pub mod young;
