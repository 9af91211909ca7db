//! Fit results shared by the three estimators.

use serde::{Deserialize, Serialize};

use crate::design::TestletDesign;
use crate::error::Result;
use crate::model::{factor_to_irt, rescale_unstandardized, FactorParams, ItemIrtParams, TestletVariances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mmle,
    Mcmc,
    Dwls,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Mmle => "mmle",
            EstimatorKind::Mcmc => "mcmc",
            EstimatorKind::Dwls => "dwls",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mmle" => Some(Self::Mmle),
            "mcmc" => Some(Self::Mcmc),
            "dwls" => Some(Self::Dwls),
            _ => None,
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output of any estimator: standardized factor parameters, converted IRT
/// parameters, and convergence bookkeeping.
///
/// `sigma2` holds the raw testlet-variance estimates. For a flagged
/// limited-information fit these can be negative (the improper solution is
/// reported, not hidden); `factor.sigma2` clamps at zero so the factor
/// parameterization stays valid. Items whose conversion to the IRT metric is
/// undefined (Heywood) carry `None` in `irt`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimator: EstimatorKind,
    pub factor: FactorParams,
    pub sigma2: Vec<f64>,
    pub irt: Vec<Option<ItemIrtParams>>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub heywood: bool,
    pub n_iterations: usize,
    pub wall_time_s: f64,
    pub min_communality_residual: f64,
}

impl FitResult {
    /// Assemble from conditional (theta-metric, unit-residual) parameters.
    /// Communalities are structurally below 1 here, so every item converts.
    pub(crate) fn from_conditional(
        estimator: EstimatorKind,
        lambda_raw: &[f64],
        tau_raw: &[f64],
        sigma2: &[f64],
        design: &TestletDesign,
        loglik: Option<f64>,
        converged: bool,
        n_iterations: usize,
        wall_time_s: f64,
    ) -> Result<Self> {
        let mut lambda = Vec::with_capacity(lambda_raw.len());
        let mut tau = Vec::with_capacity(tau_raw.len());
        for j in 0..lambda_raw.len() {
            let s2 = design.testlet_of(j).map_or(0.0, |d| sigma2[d]);
            let (l, t) = rescale_unstandardized(lambda_raw[j], tau_raw[j], s2);
            lambda.push(l);
            tau.push(t);
        }
        let factor = FactorParams::new(
            lambda,
            tau,
            TestletVariances::new(sigma2.iter().map(|v| v.max(0.0)).collect())?,
        )?;
        Ok(Self::from_standardized(
            estimator,
            factor,
            sigma2.to_vec(),
            design,
            loglik,
            converged,
            n_iterations,
            wall_time_s,
        ))
    }

    /// Assemble from standardized factor parameters, flagging Heywood items
    /// (communality >= 1) and negative variance estimates.
    pub(crate) fn from_standardized(
        estimator: EstimatorKind,
        factor: FactorParams,
        sigma2_raw: Vec<f64>,
        design: &TestletDesign,
        loglik: Option<f64>,
        optimizer_converged: bool,
        n_iterations: usize,
        wall_time_s: f64,
    ) -> Self {
        let n = factor.n_items();
        let mut min_resid = f64::INFINITY;
        let mut irt = Vec::with_capacity(n);
        // communality judged on the raw variance estimates
        let raw_factor = FactorParams {
            lambda: factor.lambda.clone(),
            tau: factor.tau.clone(),
            sigma2: TestletVariances(sigma2_raw.clone()),
        };
        for j in 0..n {
            let resid = 1.0 - raw_factor.communality(design, j);
            min_resid = min_resid.min(resid);
            if resid > 0.0 {
                irt.push(factor_to_irt(&raw_factor, design, j).ok());
            } else {
                irt.push(None);
            }
        }
        let negative_variance = sigma2_raw.iter().any(|&v| v < -1e-8);
        let heywood = negative_variance || min_resid <= 0.0;
        FitResult {
            estimator,
            factor,
            sigma2: sigma2_raw,
            irt,
            loglik,
            converged: optimizer_converged && !heywood,
            heywood,
            n_iterations,
            wall_time_s,
            min_communality_residual: min_resid,
        }
    }

    pub fn n_items(&self) -> usize {
        self.factor.n_items()
    }

    /// Discrimination estimates, NaN where undefined.
    pub fn a_vec(&self) -> Vec<f64> {
        self.irt
            .iter()
            .map(|p| p.map_or(f64::NAN, |it| it.a))
            .collect()
    }

    /// Difficulty estimates, NaN where undefined.
    pub fn b_vec(&self) -> Vec<f64> {
        self.irt
            .iter()
            .map(|p| p.map_or(f64::NAN, |it| it.b))
            .collect()
    }
}
