//! Numerical support: normal distribution functions and quadrature rules.

pub mod normal;
pub mod quadrature;

pub use normal::{bvn_cdf, bvn_pdf, log_norm_cdf, norm_cdf, norm_pdf, norm_quantile};
pub use quadrature::{gauss_hermite, gauss_legendre, QuadRule};
