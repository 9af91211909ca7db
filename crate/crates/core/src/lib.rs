//! Estimation toolkit for the two-parameter logistic testlet model.
//!
//! Items that share a stimulus (a reading passage, a common diagram) stay
//! correlated after conditioning on the trait being measured. The testlet
//! model absorbs that local dependence through a person-specific random
//! effect shared by the items of each testlet. This crate implements the
//! model end to end:
//!
//! - [`model`]: the response function, the constrained bi-factor
//!   correspondence, and conversions between the logistic IRT metric and the
//!   standardized factor metric;
//! - [`datagen`]: seeded, reproducible simulation of item parameters,
//!   abilities, and response matrices;
//! - [`mmle`]: marginal maximum likelihood via an EM algorithm using
//!   bi-factor dimension reduction (every integral is at most
//!   two-dimensional);
//! - [`mcmc`]: Metropolis-within-Gibbs posterior sampling with multi-chain
//!   PSRF convergence assessment and posterior predictive checking;
//! - [`liminfo`]: limited-information estimation from thresholds and
//!   tetrachoric correlations by diagonally weighted least squares, with
//!   Heywood-case detection;
//! - [`harness`]: Monte Carlo parameter-recovery studies over a
//!   sample-size x testlet-variance grid with Bias/SE/RMSE reporting;
//! - [`formats`]: the CSV/JSON file formats shared with the CLI.

pub mod datagen;
pub mod design;
pub mod error;
pub mod fit;
pub mod formats;
pub mod harness;
pub mod liminfo;
pub mod mcmc;
pub mod mmle;
pub mod model;
pub mod stats;

pub use design::{ResponseMatrix, TestletDesign};
pub use error::{Error, Result};
pub use fit::{EstimatorKind, FitResult};
pub use model::{
    factor_to_irt, implied_tetrachorics, irt_to_factor, prob_correct, rescale_unstandardized,
    FactorParams, ItemIrtParams, PersonAbilities, TestletVariances,
};
