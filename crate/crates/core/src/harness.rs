//! Monte Carlo parameter-recovery studies over a sample-size by
//! testlet-variance grid.
//!
//! Each cell of the study generates data, fits the requested estimators, and
//! aggregates Bias, SE, and RMSE (shared divisor R, so RMSE^2 = Bias^2 +
//! SE^2 holds exactly) over the replications that converged; Heywood and
//! non-converged replications are counted but excluded from the metrics,
//! matching how the published tables were computed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    derive_seed, generate_persons, generate_responses, table1_fixture, GenConfig, ItemSpec,
};
use crate::design::TestletDesign;
use crate::error::{Error, Result};
use crate::fit::{EstimatorKind, FitResult};
use crate::liminfo::fit_dwls_from_data;
use crate::mcmc::{fit_mcmc, ChainSpec, PriorSpec};
use crate::mmle::{fit_mmle, EmSettings, QuadratureSpec};
use crate::model::{ItemIrtParams, TestletVariances};

/// Mean(estimates) - truth.
pub fn bias(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidConfig("bias needs at least one estimate".into()));
    }
    Ok(estimates.iter().sum::<f64>() / estimates.len() as f64 - truth)
}

/// Monte Carlo standard error with divisor R (not R - 1).
pub fn se(estimates: &[f64]) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::InvalidConfig("se needs at least two estimates".into()));
    }
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    Ok((estimates.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / r).sqrt())
}

/// Root mean square error with divisor R; RMSE^2 = Bias^2 + SE^2.
pub fn rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidConfig("rmse needs at least one estimate".into()));
    }
    let r = estimates.len() as f64;
    Ok((estimates.iter().map(|x| (x - truth) * (x - truth)).sum::<f64>() / r).sqrt())
}

/// One cell of the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub sample_size: usize,
    pub testlet_variance: f64,
}

/// Whether the ability draws are shared across replications of a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PersonsMode {
    /// One set of abilities per sample size, reused by every replication
    /// (the published design).
    #[default]
    PerSampleSize,
    /// Fresh abilities for every replication.
    PerReplication,
}

/// Full study configuration.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub grid: Vec<Condition>,
    pub n_replications: usize,
    pub estimators: Vec<EstimatorKind>,
    pub base_seed: u64,
    pub items: Vec<ItemIrtParams>,
    pub design: TestletDesign,
    pub persons_mode: PersonsMode,
    pub em: EmSettings,
    pub quad: QuadratureSpec,
    pub chains: ChainSpec,
    pub priors: PriorSpec,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            grid: vec![
                Condition { sample_size: 500, testlet_variance: 0.25 },
                Condition { sample_size: 500, testlet_variance: 0.5 },
                Condition { sample_size: 500, testlet_variance: 1.0 },
                Condition { sample_size: 1000, testlet_variance: 0.25 },
                Condition { sample_size: 1000, testlet_variance: 0.5 },
                Condition { sample_size: 1000, testlet_variance: 1.0 },
                Condition { sample_size: 2000, testlet_variance: 0.25 },
                Condition { sample_size: 2000, testlet_variance: 0.5 },
                Condition { sample_size: 2000, testlet_variance: 1.0 },
            ],
            n_replications: 20,
            estimators: vec![EstimatorKind::Mmle, EstimatorKind::Dwls],
            base_seed: 0,
            items: table1_fixture(),
            design: TestletDesign::blocks(6, 5),
            persons_mode: PersonsMode::PerSampleSize,
            em: EmSettings::default(),
            quad: QuadratureSpec::default(),
            chains: ChainSpec::default(),
            priors: PriorSpec::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("empty condition grid".into()));
        }
        if self.n_replications < 2 {
            return Err(Error::InvalidConfig("need at least 2 replications".into()));
        }
        if self.items.len() != self.design.n_items() {
            return Err(Error::DimensionMismatch("items vs design".into()));
        }
        Ok(())
    }
}

/// How one fit ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    Heywood,
    NonConverged,
}

/// One (condition, replication, estimator) outcome.
#[derive(Debug)]
pub struct FitRecord {
    pub condition: Condition,
    pub replication: usize,
    pub estimator: EstimatorKind,
    pub status: FitStatus,
    pub fit: Option<FitResult>,
    pub psrf_max: Option<f64>,
    pub ppp: Option<f64>,
    pub error: Option<String>,
}

/// Bias/SE/RMSE triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub bias: f64,
    pub se: f64,
    pub rmse: f64,
}

/// Metrics for one parameter class: per item (or per testlet), then the
/// mean and spread across them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSummary {
    pub per_item: Vec<ParamMetrics>,
    pub mean: Option<ParamMetrics>,
    pub sd: Option<ParamMetrics>,
}

impl ClassSummary {
    pub(crate) fn empty() -> Self {
        Self {
            per_item: Vec::new(),
            mean: None,
            sd: None,
        }
    }

    pub(crate) fn from_metrics(per_item: Vec<ParamMetrics>) -> Self {
        if per_item.is_empty() {
            return Self::empty();
        }
        let n = per_item.len() as f64;
        let mean = ParamMetrics {
            bias: per_item.iter().map(|m| m.bias).sum::<f64>() / n,
            se: per_item.iter().map(|m| m.se).sum::<f64>() / n,
            rmse: per_item.iter().map(|m| m.rmse).sum::<f64>() / n,
        };
        let sd_of = |f: fn(&ParamMetrics) -> f64, mu: f64| {
            if per_item.len() < 2 {
                0.0
            } else {
                (per_item.iter().map(|m| (f(m) - mu) * (f(m) - mu)).sum::<f64>() / (n - 1.0))
                    .sqrt()
            }
        };
        let sd = ParamMetrics {
            bias: sd_of(|m| m.bias, mean.bias),
            se: sd_of(|m| m.se, mean.se),
            rmse: sd_of(|m| m.rmse, mean.rmse),
        };
        Self {
            per_item,
            mean: Some(mean),
            sd: Some(sd),
        }
    }
}

/// Aggregated results for one (condition, estimator) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub condition: Condition,
    pub estimator: EstimatorKind,
    pub a: ClassSummary,
    pub b: ClassSummary,
    pub sigma2: ClassSummary,
    pub n_converged: usize,
    pub n_heywood: usize,
    pub n_nonconverged: usize,
}

/// Study-level report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_replications: usize,
    pub cells: Vec<CellReport>,
}

impl RecoveryReport {
    pub fn cell(&self, condition: &Condition, estimator: EstimatorKind) -> Option<&CellReport> {
        self.cells.iter().find(|c| {
            c.estimator == estimator
                && c.condition.sample_size == condition.sample_size
                && (c.condition.testlet_variance - condition.testlet_variance).abs() < 1e-12
        })
    }
}

const PURPOSE_PERSONS: u64 = 0x01_0000;
const PURPOSE_DATA: u64 = 0x02_0000;
const PURPOSE_CHAIN: u64 = 0x03_0000;

fn job_tag(purpose: u64, cond_idx: usize, rep: usize) -> u64 {
    purpose | ((cond_idx as u64) << 32) | rep as u64
}

fn run_one_estimator(
    cfg: &StudyConfig,
    estimator: EstimatorKind,
    data: &crate::design::ResponseMatrix,
    mcmc_seed: u64,
) -> (FitStatus, Option<FitResult>, Option<f64>, Option<f64>, Option<String>) {
    match estimator {
        EstimatorKind::Mmle => match fit_mmle(data, &cfg.design, &cfg.quad, &cfg.em) {
            Ok(fit) => {
                let status = if fit.converged {
                    FitStatus::Converged
                } else {
                    FitStatus::NonConverged
                };
                (status, Some(fit), None, None, None)
            }
            Err(e) => (FitStatus::NonConverged, None, None, None, Some(e.to_string())),
        },
        EstimatorKind::Dwls => match fit_dwls_from_data(data, &cfg.design) {
            Ok(fit) => {
                let status = if fit.heywood {
                    FitStatus::Heywood
                } else if fit.converged {
                    FitStatus::Converged
                } else {
                    FitStatus::NonConverged
                };
                (status, Some(fit), None, None, None)
            }
            Err(e) => (FitStatus::NonConverged, None, None, None, Some(e.to_string())),
        },
        EstimatorKind::Mcmc => {
            let chains = ChainSpec {
                seed: mcmc_seed,
                ..cfg.chains
            };
            match fit_mcmc(data, &cfg.design, &cfg.priors, &chains) {
                Ok((fit, summary)) => {
                    let status = if fit.converged {
                        FitStatus::Converged
                    } else {
                        FitStatus::NonConverged
                    };
                    (
                        status,
                        Some(fit),
                        Some(summary.psrf_max),
                        Some(summary.ppp),
                        None,
                    )
                }
                Err(e) => (FitStatus::NonConverged, None, None, None, Some(e.to_string())),
            }
        }
    }
}

/// Run the full study: generate, fit, classify, aggregate. Deterministic
/// given the base seed; replications execute in parallel and results merge
/// in a fixed order.
pub fn run_study(cfg: &StudyConfig) -> Result<(RecoveryReport, Vec<FitRecord>)> {
    cfg.validate()?;

    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|c| (0..cfg.n_replications).map(move |r| (c, r)))
        .collect();

    let records: Vec<Vec<FitRecord>> = jobs
        .par_iter()
        .map(|&(cond_idx, rep)| {
            let condition = cfg.grid[cond_idx];
            let persons_seed = match cfg.persons_mode {
                PersonsMode::PerSampleSize => derive_seed(
                    cfg.base_seed,
                    PURPOSE_PERSONS | condition.sample_size as u64,
                ),
                PersonsMode::PerReplication => {
                    derive_seed(cfg.base_seed, job_tag(PURPOSE_PERSONS, cond_idx, rep))
                }
            };
            let data_seed = derive_seed(cfg.base_seed, job_tag(PURPOSE_DATA, cond_idx, rep));
            let sigma2 =
                TestletVariances::constant(cfg.design.n_testlets(), condition.testlet_variance)
                    .expect("validated variance");

            let persons_cfg = GenConfig {
                n_persons: condition.sample_size,
                design: cfg.design.clone(),
                sigma2: sigma2.clone(),
                items: ItemSpec::Fixed(cfg.items.clone()),
                seed: persons_seed,
            };
            let persons = generate_persons(&persons_cfg).expect("validated config");
            let data_cfg = GenConfig {
                seed: data_seed,
                ..persons_cfg
            };
            let data =
                generate_responses(&data_cfg, &persons, &cfg.items).expect("validated config");

            cfg.estimators
                .iter()
                .map(|&estimator| {
                    let mcmc_seed =
                        derive_seed(cfg.base_seed, job_tag(PURPOSE_CHAIN, cond_idx, rep));
                    let (status, fit, psrf_max, ppp, error) =
                        run_one_estimator(cfg, estimator, &data, mcmc_seed);
                    FitRecord {
                        condition,
                        replication: rep,
                        estimator,
                        status,
                        fit,
                        psrf_max,
                        ppp,
                        error,
                    }
                })
                .collect()
        })
        .collect();

    let mut records: Vec<FitRecord> = records.into_iter().flatten().collect();
    records.sort_by_key(|r| {
        (
            cfg.grid
                .iter()
                .position(|c| {
                    c.sample_size == r.condition.sample_size
                        && (c.testlet_variance - r.condition.testlet_variance).abs() < 1e-12
                })
                .unwrap_or(usize::MAX),
            r.replication,
            r.estimator.as_str(),
        )
    });

    let report = aggregate(cfg, &records);
    Ok((report, records))
}

fn aggregate(cfg: &StudyConfig, records: &[FitRecord]) -> RecoveryReport {
    let mut cells = Vec::new();
    for (cond_idx, condition) in cfg.grid.iter().enumerate() {
        for &estimator in &cfg.estimators {
            let cell_records: Vec<&FitRecord> = records
                .iter()
                .filter(|r| {
                    r.estimator == estimator
                        && r.condition.sample_size == condition.sample_size
                        && (r.condition.testlet_variance - condition.testlet_variance).abs()
                            < 1e-12
                })
                .collect();
            let converged: Vec<&FitRecord> = cell_records
                .iter()
                .copied()
                .filter(|r| r.status == FitStatus::Converged)
                .collect();
            let n_heywood = cell_records
                .iter()
                .filter(|r| r.status == FitStatus::Heywood)
                .count();
            let n_nonconverged = cell_records
                .iter()
                .filter(|r| r.status == FitStatus::NonConverged)
                .count();

            let (a, b, sigma2) = if converged.len() >= 2 {
                let n_items = cfg.design.n_items();
                let mut a_metrics = Vec::with_capacity(n_items);
                let mut b_metrics = Vec::with_capacity(n_items);
                for j in 0..n_items {
                    let a_est: Vec<f64> = converged
                        .iter()
                        .map(|r| r.fit.as_ref().unwrap().a_vec()[j])
                        .collect();
                    let b_est: Vec<f64> = converged
                        .iter()
                        .map(|r| r.fit.as_ref().unwrap().b_vec()[j])
                        .collect();
                    a_metrics.push(metrics(&a_est, cfg.items[j].a));
                    b_metrics.push(metrics(&b_est, cfg.items[j].b));
                }
                let mut s_metrics = Vec::with_capacity(cfg.design.n_testlets());
                for d in 0..cfg.design.n_testlets() {
                    let est: Vec<f64> = converged
                        .iter()
                        .map(|r| r.fit.as_ref().unwrap().sigma2[d])
                        .collect();
                    s_metrics.push(metrics(&est, condition.testlet_variance));
                }
                (
                    ClassSummary::from_metrics(a_metrics),
                    ClassSummary::from_metrics(b_metrics),
                    ClassSummary::from_metrics(s_metrics),
                )
            } else {
                (ClassSummary::empty(), ClassSummary::empty(), ClassSummary::empty())
            };

            cells.push(CellReport {
                condition: *condition,
                estimator,
                a,
                b,
                sigma2,
                n_converged: converged.len(),
                n_heywood,
                n_nonconverged,
            });
        }
        let _ = cond_idx;
    }
    RecoveryReport {
        n_replications: cfg.n_replications,
        cells,
    }
}

fn metrics(estimates: &[f64], truth: f64) -> ParamMetrics {
    ParamMetrics {
        bias: bias(estimates, truth).unwrap_or(f64::NAN),
        se: se(estimates).unwrap_or(f64::NAN),
        rmse: rmse(estimates, truth).unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bias_examples() {
        assert_abs_diff_eq!(bias(&[1.0, 1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(bias(&[0.9, 1.1], 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(bias(&[1.1, 1.3], 1.0).unwrap(), 0.2, epsilon = 1e-15);
        assert!(bias(&[], 1.0).is_err());
    }

    #[test]
    fn se_examples() {
        assert_abs_diff_eq!(se(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(se(&[0.9, 1.1]).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(se(&[1.1, 1.3]).unwrap(), 0.1, epsilon = 1e-15);
        assert!(se(&[1.0]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_abs_diff_eq!(rmse(&[1.0, 1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&[0.9, 1.1], 1.0).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(
            rmse(&[1.1, 1.3], 1.0).unwrap(),
            0.05f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(rmse(&[], 1.0).is_err());
    }

    #[test]
    fn error_decomposition_identity() {
        // shared divisor R makes RMSE^2 = Bias^2 + SE^2 an algebraic identity
        let estimates = [0.83, 1.02, 1.4, 0.95, 1.11, 0.77];
        let truth = 1.05;
        let b = bias(&estimates, truth).unwrap();
        let s = se(&estimates).unwrap();
        let r = rmse(&estimates, truth).unwrap();
        assert_abs_diff_eq!(r * r, b * b + s * s, epsilon = 1e-12);
    }

    #[test]
    fn empty_estimator_set_gives_empty_report() {
        let cfg = StudyConfig {
            grid: vec![Condition { sample_size: 50, testlet_variance: 0.25 }],
            n_replications: 2,
            estimators: vec![],
            base_seed: 7,
            ..StudyConfig::default()
        };
        let (report, records) = run_study(&cfg).unwrap();
        assert!(records.is_empty());
        assert!(report.cells.is_empty());
    }

    #[test]
    fn study_config_validation() {
        let mut cfg = StudyConfig::default();
        cfg.grid.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = StudyConfig::default();
        cfg.n_replications = 1;
        assert!(cfg.validate().is_err());
    }
}
