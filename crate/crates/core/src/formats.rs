//! File formats shared by the library and the CLI: headerless response CSV,
//! truth/design/fit JSON documents, and the study report tables.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{ResponseMatrix, TestletDesign};
use crate::error::{Error, Result};
use crate::fit::{EstimatorKind, FitResult};
use crate::harness::{CellReport, Condition, FitRecord, PersonsMode, RecoveryReport, StudyConfig};
use crate::mcmc::{ChainSpec, PriorSpec};
use crate::mmle::{EmSettings, QuadratureSpec};
use crate::model::{FactorParams, ItemIrtParams, TestletVariances};

/// Write a response matrix as headerless CSV of 0/1, one row per person.
pub fn write_responses_csv(path: &Path, data: &ResponseMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut line = String::with_capacity(2 * data.n_items());
    for i in 0..data.n_persons() {
        line.clear();
        for (j, v) in data.row(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push(if *v == 1 { '1' } else { '0' });
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Read a headerless 0/1 CSV into a response matrix.
pub fn read_responses_csv(path: &Path) -> Result<ResponseMatrix> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<u8> = line
            .split(',')
            .map(|cell| match cell.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Format(format!(
                    "line {}: expected 0 or 1, found {other:?}",
                    lineno + 1
                ))),
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    ResponseMatrix::from_rows(rows)
}

/// Generating parameters as stored in `truth.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthJson {
    pub items: Vec<ItemIrtParams>,
    pub sigma2: Vec<f64>,
    /// Per-item testlet index; null marks an independent item.
    pub design: Vec<Option<usize>>,
}

impl TruthJson {
    pub fn new(items: &[ItemIrtParams], sigma2: &TestletVariances, design: &TestletDesign) -> Self {
        Self {
            items: items.to_vec(),
            sigma2: sigma2.as_slice().to_vec(),
            design: design.assignments().to_vec(),
        }
    }

    pub fn design(&self) -> Result<TestletDesign> {
        TestletDesign::from_assignments(&self.design)
    }
}

/// Design specification file: `{n_items, testlets: [[item indices], ...]}`.
/// Items listed in no testlet are independent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignJson {
    pub n_items: usize,
    pub testlets: Vec<Vec<usize>>,
}

impl DesignJson {
    pub fn from_design(design: &TestletDesign) -> Self {
        Self {
            n_items: design.n_items(),
            testlets: (0..design.n_testlets()).map(|d| design.items_in(d)).collect(),
        }
    }

    pub fn to_design(&self) -> Result<TestletDesign> {
        TestletDesign::new(self.n_items, &self.testlets)
    }
}

/// Factor-metric parameter file for the conversion commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorJson {
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub testlets: Vec<Vec<usize>>,
}

impl FactorJson {
    pub fn to_parts(&self) -> Result<(FactorParams, TestletDesign)> {
        let design = TestletDesign::new(self.lambda.len(), &self.testlets)?;
        if self.sigma2.len() != design.n_testlets() {
            return Err(Error::DimensionMismatch(
                "sigma2 length vs number of testlets".into(),
            ));
        }
        let fp = FactorParams::new(
            self.lambda.clone(),
            self.tau.clone(),
            TestletVariances::new(self.sigma2.clone())?,
        )?;
        Ok((fp, design))
    }
}

/// Serialized fit result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitJson {
    pub estimator: String,
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub a: Vec<Option<f64>>,
    pub b: Vec<Option<f64>>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heywood: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_communality_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psrf_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_retained: Option<usize>,
}

impl FitJson {
    pub fn from_fit(fit: &FitResult) -> Self {
        let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
        Self {
            estimator: fit.estimator.as_str().to_string(),
            lambda: fit.factor.lambda.clone(),
            tau: fit.factor.tau.clone(),
            sigma2: fit.sigma2.clone(),
            a: fit.irt.iter().map(|p| p.map(|it| it.a)).collect(),
            b: fit.irt.iter().map(|p| p.map(|it| it.b)).collect(),
            loglik: fit.loglik.and_then(finite),
            converged: fit.converged,
            iterations: fit.n_iterations,
            wall_time_s: fit.wall_time_s,
            heywood: match fit.estimator {
                EstimatorKind::Dwls => Some(fit.heywood),
                _ => None,
            },
            min_communality_residual: match fit.estimator {
                EstimatorKind::Dwls => finite(fit.min_communality_residual),
                _ => None,
            },
            psrf_max: None,
            ppp: None,
            n_retained: None,
        }
    }

    pub fn with_mcmc_diagnostics(mut self, psrf_max: f64, ppp: f64, n_retained: usize) -> Self {
        self.psrf_max = Some(psrf_max);
        self.ppp = if ppp.is_finite() { Some(ppp) } else { None };
        self.n_retained = Some(n_retained);
        self
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format(e.to_string()))
}

/// Study configuration file. Everything except the grid has defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfigFile {
    pub grid: Vec<Condition>,
    pub n_replications: usize,
    pub estimators: Vec<String>,
    pub base_seed: u64,
    pub persons_mode: PersonsMode,
    pub design: Option<DesignJson>,
    pub items: Option<Vec<ItemIrtParams>>,
    pub em: EmSettings,
    pub quad: QuadratureSpec,
    pub chains: ChainSpec,
    pub priors: PriorSpec,
}

impl Default for StudyConfigFile {
    fn default() -> Self {
        let cfg = StudyConfig::default();
        Self {
            grid: cfg.grid.clone(),
            n_replications: cfg.n_replications,
            estimators: cfg.estimators.iter().map(|e| e.as_str().to_string()).collect(),
            base_seed: cfg.base_seed,
            persons_mode: cfg.persons_mode,
            design: None,
            items: None,
            em: cfg.em,
            quad: cfg.quad,
            chains: cfg.chains,
            priors: cfg.priors,
        }
    }
}

impl StudyConfigFile {
    pub fn to_study_config(&self) -> Result<StudyConfig> {
        let estimators = self
            .estimators
            .iter()
            .map(|s| {
                EstimatorKind::parse(s)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let design = match &self.design {
            Some(d) => d.to_design()?,
            None => TestletDesign::blocks(6, 5),
        };
        let items = match &self.items {
            Some(i) => i.clone(),
            None => crate::datagen::table1_fixture(),
        };
        let cfg = StudyConfig {
            grid: self.grid.clone(),
            n_replications: self.n_replications,
            estimators,
            base_seed: self.base_seed,
            items,
            design,
            persons_mode: self.persons_mode,
            em: self.em,
            quad: self.quad,
            chains: self.chains,
            priors: self.priors,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
struct ReportRow<'a> {
    sample_size: usize,
    testlet_variance: f64,
    estimator: &'a str,
    parameter: &'a str,
    index: usize,
    bias: f64,
    se: f64,
    rmse: f64,
}

/// Long-format metrics table: one row per (condition, estimator, parameter
/// class, item).
pub fn write_report_csv(path: &Path, report: &RecoveryReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for cell in &report.cells {
        for (name, class) in [("a", &cell.a), ("b", &cell.b), ("sigma2", &cell.sigma2)] {
            for (idx, m) in class.per_item.iter().enumerate() {
                w.serialize(ReportRow {
                    sample_size: cell.condition.sample_size,
                    testlet_variance: cell.condition.testlet_variance,
                    estimator: cell.estimator.as_str(),
                    parameter: name,
                    index: idx,
                    bias: m.bias,
                    se: m.se,
                    rmse: m.rmse,
                })
                .map_err(|e| Error::Format(e.to_string()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConvergenceRow<'a> {
    sample_size: usize,
    testlet_variance: f64,
    estimator: &'a str,
    converged: usize,
    heywood: usize,
    nonconverged: usize,
}

pub fn write_convergence_csv(path: &Path, report: &RecoveryReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for cell in &report.cells {
        w.serialize(ConvergenceRow {
            sample_size: cell.condition.sample_size,
            testlet_variance: cell.condition.testlet_variance,
            estimator: cell.estimator.as_str(),
            converged: cell.n_converged,
            heywood: cell.n_heywood,
            nonconverged: cell.n_nonconverged,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Write `report.csv`, `convergence.csv`, and `summary.json` under `dir`.
pub fn write_study_outputs(dir: &Path, report: &RecoveryReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_report_csv(&dir.join("report.csv"), report)?;
    write_convergence_csv(&dir.join("convergence.csv"), report)?;
    write_json(&dir.join("summary.json"), report)?;
    Ok(())
}

/// Directory name for one condition under `runs/`.
pub fn condition_dir_name(c: &Condition) -> String {
    format!("ss{}_tv{}", c.sample_size, c.testlet_variance)
}

/// Persist one replication's fit under
/// `<dir>/<condition>/rep<NNN>/<estimator>.json`.
pub fn persist_fit_record(dir: &Path, record: &FitRecord) -> Result<()> {
    let sub = dir
        .join(condition_dir_name(&record.condition))
        .join(format!("rep{:03}", record.replication));
    std::fs::create_dir_all(&sub)?;
    let json = match &record.fit {
        Some(fit) => {
            let mut j = FitJson::from_fit(fit);
            if let (Some(psrf), Some(ppp)) = (record.psrf_max, record.ppp) {
                j = j.with_mcmc_diagnostics(psrf, ppp, 0);
                j.n_retained = None;
            }
            // the dwls heywood flag already rides along; record failures too
            j
        }
        None => FitJson {
            estimator: record.estimator.as_str().to_string(),
            lambda: vec![],
            tau: vec![],
            sigma2: vec![],
            a: vec![],
            b: vec![],
            loglik: None,
            converged: false,
            iterations: 0,
            wall_time_s: 0.0,
            heywood: None,
            min_communality_residual: None,
            psrf_max: None,
            ppp: None,
            n_retained: None,
        },
    };
    write_json(&sub.join(format!("{}.json", record.estimator.as_str())), &json)
}

/// Summary of persisted runs used by the diagnose command.
#[derive(Debug, Clone, Serialize)]
pub struct RunDiagnostic {
    pub path: String,
    pub estimator: String,
    pub converged: bool,
    pub heywood: bool,
    pub psrf_max: Option<f64>,
}

/// Scan a `runs/` tree for per-replication fit files.
pub fn scan_runs(dir: &Path) -> Result<Vec<RunDiagnostic>> {
    let mut out = Vec::new();
    scan_runs_inner(dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn scan_runs_inner(dir: &Path, out: &mut Vec<RunDiagnostic>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            scan_runs_inner(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            if let Ok(fit) = read_json::<FitJson>(&path) {
                out.push(RunDiagnostic {
                    path: path.display().to_string(),
                    estimator: fit.estimator.clone(),
                    converged: fit.converged,
                    heywood: fit.heywood.unwrap_or(false),
                    psrf_max: fit.psrf_max,
                });
            }
        }
    }
    Ok(())
}
