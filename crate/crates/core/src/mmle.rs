//! Marginal maximum likelihood for the testlet model via an EM algorithm.
//!
//! The constrained bi-factor structure makes every marginal integral at most
//! two-dimensional: conditioning on the general trait, the testlet effects
//! are independent across testlets, so the person likelihood is an outer
//! quadrature over theta with one inner quadrature per testlet. Estimation
//! runs in the conditional probit metric (loading/threshold with unit
//! residual variance, testlet variance free); results are rescaled to the
//! standardized metric and converted to the logistic IRT metric for
//! reporting.

use crate::design::{ResponseMatrix, TestletDesign};
use crate::error::{Error, Result};
use crate::fit::{EstimatorKind, FitResult};
use crate::model::{FactorParams, PersonAbilities};
use crate::stats::normal::{log_norm_cdf, norm_cdf, norm_pdf, norm_quantile};
use crate::stats::quadrature::{gauss_hermite, QuadRule};

/// Gauss-Hermite quadrature size per latent dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub n_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { n_nodes: 21 }
    }
}

impl QuadratureSpec {
    pub fn new(n_nodes: usize) -> Result<Self> {
        if n_nodes < 5 {
            return Err(Error::InvalidConfig("need at least 5 quadrature nodes".into()));
        }
        Ok(Self { n_nodes })
    }

    fn rule(&self) -> QuadRule {
        gauss_hermite(self.n_nodes)
    }
}

/// EM iteration controls.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EmSettings {
    pub max_iterations: usize,
    pub loglik_tol: f64,
    pub param_tol: f64,
    /// Newton steps per parameter block inside one M-step.
    pub newton_iterations: usize,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            loglik_tol: 1e-6,
            param_tol: 1e-5,
            newton_iterations: 10,
        }
    }
}

/// Upper bound for the testlet variance during estimation.
const SIGMA2_MAX: f64 = 10.0;
const PROB_FLOOR: f64 = 1e-12;

/// Conditional-metric parameters the EM iterates on.
#[derive(Debug, Clone)]
struct CondParams {
    lambda: Vec<f64>,
    tau: Vec<f64>,
    /// Per-testlet standard deviations (sigma, not sigma^2).
    sigma: Vec<f64>,
}

impl CondParams {
    fn from_factor(fp: &FactorParams, design: &TestletDesign) -> Result<Self> {
        fp.check_communalities(design)?;
        let mut lambda = Vec::with_capacity(fp.n_items());
        let mut tau = Vec::with_capacity(fp.n_items());
        for j in 0..fp.n_items() {
            let resid = (1.0 - fp.communality(design, j)).sqrt();
            lambda.push(fp.lambda[j] / resid);
            tau.push(fp.tau[j] / resid);
        }
        let sigma = fp.sigma2.as_slice().iter().map(|v| v.sqrt()).collect();
        Ok(Self { lambda, tau, sigma })
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.lambda.iter().zip(&other.lambda) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.tau.iter().zip(&other.tau) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.sigma.iter().zip(&other.sigma) {
            m = m.max((a * a - b * b).abs());
        }
        m
    }
}

/// Per-item response log-probability tables on the quadrature grid plus the
/// layout of the design.
struct Grid<'a> {
    design: &'a TestletDesign,
    rule: QuadRule,
    indep: Vec<usize>,
    testlets: Vec<Vec<usize>>,
    /// independent items: [item][q] log P and log Q
    lp1_ind: Vec<Vec<f64>>,
    lp0_ind: Vec<Vec<f64>>,
    /// testlet items: [item][q*R + r]
    lp1_tst: Vec<Vec<f64>>,
    lp0_tst: Vec<Vec<f64>>,
    /// per testlet: sum over its items of lp0 on the grid
    base0_tst: Vec<Vec<f64>>,
    /// sum over independent items of lp0 at each theta node
    base0_ind: Vec<f64>,
}

impl<'a> Grid<'a> {
    fn new(design: &'a TestletDesign, params: &CondParams, rule: QuadRule) -> Self {
        let q_n = rule.len();
        let indep = design.independent_items();
        let testlets: Vec<Vec<usize>> = (0..design.n_testlets())
            .map(|d| design.items_in(d))
            .collect();
        let n_items = design.n_items();

        let mut lp1_ind = vec![Vec::new(); n_items];
        let mut lp0_ind = vec![Vec::new(); n_items];
        for &j in &indep {
            let mut p1 = Vec::with_capacity(q_n);
            let mut p0 = Vec::with_capacity(q_n);
            for &t in &rule.nodes {
                let z = params.lambda[j] * t - params.tau[j];
                p1.push(log_norm_cdf(z));
                p0.push(log_norm_cdf(-z));
            }
            lp1_ind[j] = p1;
            lp0_ind[j] = p0;
        }
        let mut base0_ind = vec![0.0; q_n];
        for &j in &indep {
            for q in 0..q_n {
                base0_ind[q] += lp0_ind[j][q];
            }
        }

        let mut lp1_tst = vec![Vec::new(); n_items];
        let mut lp0_tst = vec![Vec::new(); n_items];
        let mut base0_tst = Vec::with_capacity(testlets.len());
        for (d, items) in testlets.iter().enumerate() {
            let sd = params.sigma[d];
            let mut base = vec![0.0; q_n * q_n];
            for &j in items {
                let mut p1 = Vec::with_capacity(q_n * q_n);
                let mut p0 = Vec::with_capacity(q_n * q_n);
                for &t in &rule.nodes {
                    for &zeta in &rule.nodes {
                        let z = params.lambda[j] * (t + sd * zeta) - params.tau[j];
                        p1.push(log_norm_cdf(z));
                        p0.push(log_norm_cdf(-z));
                    }
                }
                for (b, &v) in base.iter_mut().zip(p0.iter()) {
                    *b += v;
                }
                lp1_tst[j] = p1;
                lp0_tst[j] = p0;
            }
            base0_tst.push(base);
        }

        Grid {
            design,
            rule,
            indep,
            testlets,
            lp1_ind,
            lp0_ind,
            lp1_tst,
            lp0_tst,
            base0_tst,
            base0_ind,
        }
    }

    /// Log-likelihood contribution of one person, plus optional posterior
    /// byproducts used by the E-step and EAP scoring.
    fn person(&self, row: &[u8], scratch: &mut PersonScratch) -> f64 {
        let q_n = self.rule.len();
        let log_w: &[f64] = &scratch.log_w;
        let log_v: &[f64] = &scratch.log_v;

        // independent-item block at each theta node
        scratch.log_a.copy_from_slice(&self.base0_ind);
        for &j in &self.indep {
            if row[j] == 1 {
                for q in 0..q_n {
                    scratch.log_a[q] += self.lp1_ind[j][q] - self.lp0_ind[j][q];
                }
            }
        }

        // testlet blocks: logB over the (theta, zeta) grid, then the inner
        // integral S_d(theta) by log-sum-exp over zeta
        for (d, items) in self.testlets.iter().enumerate() {
            let log_b = &mut scratch.log_b[d];
            log_b.copy_from_slice(&self.base0_tst[d]);
            for &j in items {
                if row[j] == 1 {
                    let p1 = &self.lp1_tst[j];
                    let p0 = &self.lp0_tst[j];
                    for (idx, b) in log_b.iter_mut().enumerate() {
                        *b += p1[idx] - p0[idx];
                    }
                }
            }
            let s_d = &mut scratch.log_s[d];
            for q in 0..q_n {
                let slice = &log_b[q * q_n..(q + 1) * q_n];
                s_d[q] = log_sum_exp_weighted(slice, log_v);
            }
        }

        // outer integral over theta
        for q in 0..q_n {
            let mut v = log_w[q] + scratch.log_a[q];
            for d in 0..self.testlets.len() {
                v += scratch.log_s[d][q];
            }
            scratch.log_joint[q] = v;
        }
        let log_l = log_sum_exp(&scratch.log_joint);
        for q in 0..q_n {
            scratch.post_theta[q] = (scratch.log_joint[q] - log_l).exp();
        }
        log_l
    }
}

struct PersonScratch {
    log_w: Vec<f64>,
    log_v: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<Vec<f64>>,
    log_s: Vec<Vec<f64>>,
    log_joint: Vec<f64>,
    post_theta: Vec<f64>,
}

impl PersonScratch {
    fn new(rule: &QuadRule, n_testlets: usize) -> Self {
        let q_n = rule.len();
        let log_w: Vec<f64> = rule.weights.iter().map(|w| w.ln()).collect();
        Self {
            log_v: log_w.clone(),
            log_w,
            log_a: vec![0.0; q_n],
            log_b: vec![vec![0.0; q_n * q_n]; n_testlets],
            log_s: vec![vec![0.0; q_n]; n_testlets],
            log_joint: vec![0.0; q_n],
            post_theta: vec![0.0; q_n],
        }
    }
}

#[inline]
fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

#[inline]
fn log_sum_exp_weighted(v: &[f64], log_w: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (x, w) in v.iter().zip(log_w) {
        let t = x + w;
        if t > m {
            m = t;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for (x, w) in v.iter().zip(log_w) {
        s += (x + w - m).exp();
    }
    m + s.ln()
}

/// Marginal log-likelihood of standardized factor parameters on a dataset,
/// evaluated by nested quadrature (outer general trait, inner per-testlet
/// effect).
pub fn marginal_loglik(
    fp: &FactorParams,
    data: &ResponseMatrix,
    design: &TestletDesign,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if data.n_items() != design.n_items() {
        return Err(Error::DimensionMismatch("data vs design".into()));
    }
    if fp.n_items() != design.n_items() {
        return Err(Error::DimensionMismatch("params vs design".into()));
    }
    if fp.sigma2.len() != design.n_testlets() {
        return Err(Error::DimensionMismatch("sigma2 vs design".into()));
    }
    let params = CondParams::from_factor(fp, design)?;
    let grid = Grid::new(design, &params, quad.rule());
    let mut scratch = PersonScratch::new(&grid.rule, design.n_testlets());
    let mut total = 0.0;
    for i in 0..data.n_persons() {
        total += grid.person(data.row(i), &mut scratch);
    }
    Ok(total)
}

/// Expected-count tables accumulated by the E-step.
struct EStepTables {
    loglik: f64,
    /// theta-node masses (shared by all independent items)
    n_theta: Vec<f64>,
    /// correct-response masses per independent item
    r_ind: Vec<Vec<f64>>,
    /// per-testlet joint-node masses [d][q*R+r]
    n_tst: Vec<Vec<f64>>,
    /// correct-response masses per testlet item [item][q*R+r]
    r_tst: Vec<Vec<f64>>,
}

fn e_step(grid: &Grid<'_>, data: &ResponseMatrix) -> EStepTables {
    let q_n = grid.rule.len();
    let n_items = grid.design.n_items();
    let mut scratch = PersonScratch::new(&grid.rule, grid.testlets.len());
    let mut tables = EStepTables {
        loglik: 0.0,
        n_theta: vec![0.0; q_n],
        r_ind: vec![vec![0.0; q_n]; n_items],
        n_tst: vec![vec![0.0; q_n * q_n]; grid.testlets.len()],
        r_tst: vec![vec![0.0; q_n * q_n]; n_items],
    };
    let mut joint = vec![0.0; q_n * q_n];
    for i in 0..data.n_persons() {
        let row = data.row(i);
        tables.loglik += grid.person(row, &mut scratch);
        for q in 0..q_n {
            tables.n_theta[q] += scratch.post_theta[q];
        }
        for &j in &grid.indep {
            if row[j] == 1 {
                for q in 0..q_n {
                    tables.r_ind[j][q] += scratch.post_theta[q];
                }
            }
        }
        for (d, items) in grid.testlets.iter().enumerate() {
            let log_b = &scratch.log_b[d];
            let s_d = &scratch.log_s[d];
            for q in 0..q_n {
                let pt = scratch.post_theta[q];
                if pt < 1e-300 {
                    for r in 0..q_n {
                        joint[q * q_n + r] = 0.0;
                    }
                    continue;
                }
                let base = q * q_n;
                for r in 0..q_n {
                    joint[base + r] =
                        pt * (scratch.log_v[r] + log_b[base + r] - s_d[q]).exp();
                }
            }
            let n_d = &mut tables.n_tst[d];
            for (acc, w) in n_d.iter_mut().zip(&joint) {
                *acc += w;
            }
            for &j in items {
                if row[j] == 1 {
                    let r_j = &mut tables.r_tst[j];
                    for (acc, w) in r_j.iter_mut().zip(&joint) {
                        *acc += w;
                    }
                }
            }
        }
    }
    tables
}

/// Bernoulli-probit block log-likelihood over weighted nodes.
fn block_loglik(z: &[f64], r: &[f64], n: &[f64]) -> f64 {
    let mut ll = 0.0;
    for ((&zi, &ri), &ni) in z.iter().zip(r).zip(n) {
        if ni <= 0.0 {
            continue;
        }
        ll += ri * log_norm_cdf(zi) + (ni - ri) * log_norm_cdf(-zi);
    }
    ll
}

/// (gradient, Fisher information) of the probit block in (lambda, tau) for
/// nodes with abilities u: z = lambda*u - tau.
fn item_grad_info(
    u: &[f64],
    z: &[f64],
    r: &[f64],
    n: &[f64],
) -> ([f64; 2], [f64; 3]) {
    let mut g = [0.0; 2];
    let mut info = [0.0; 3]; // [ll, lt, tt]
    for i in 0..z.len() {
        if n[i] <= 0.0 {
            continue;
        }
        let p = norm_cdf(z[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let pdf = norm_pdf(z[i]);
        let dldz = pdf * (r[i] - n[i] * p) / (p * (1.0 - p));
        let w = n[i] * pdf * pdf / (p * (1.0 - p));
        g[0] += dldz * u[i];
        g[1] -= dldz;
        info[0] += w * u[i] * u[i];
        info[1] -= w * u[i];
        info[2] += w;
    }
    (g, info)
}

/// One item's M-step: Fisher-scoring Newton for (lambda, tau) with step
/// halving. Returns the updated pair.
fn update_item(
    u: &[f64],
    r: &[f64],
    n: &[f64],
    lambda: f64,
    tau: f64,
    max_newton: usize,
) -> (f64, f64) {
    let mut lam = lambda;
    let mut t = tau;
    let zs = |lam: f64, t: f64| -> Vec<f64> { u.iter().map(|&ui| lam * ui - t).collect() };
    let mut z = zs(lam, t);
    let mut ll = block_loglik(&z, r, n);
    for _ in 0..max_newton {
        let (g, info) = item_grad_info(u, &z, r, n);
        let det = info[0] * info[2] - info[1] * info[1];
        if det.abs() < 1e-14 {
            break;
        }
        let dl = (g[0] * info[2] - g[1] * info[1]) / det;
        let dt = (info[0] * g[1] - info[1] * g[0]) / det;
        if dl.abs().max(dt.abs()) < 1e-10 {
            break;
        }
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand_l = lam + step * dl;
            let cand_t = t + step * dt;
            let cand_z = zs(cand_l, cand_t);
            let cand_ll = block_loglik(&cand_z, r, n);
            if cand_ll >= ll - 1e-12 {
                lam = cand_l;
                t = cand_t;
                z = cand_z;
                ll = cand_ll;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (lam, t)
}

/// Expected complete-data log-likelihood of a testlet as a function of its
/// sigma, holding the item parameters fixed.
fn testlet_loglik(
    grid_nodes: &[f64],
    items: &[usize],
    params: &CondParams,
    sigma: f64,
    n_tables: &[f64],
    r_tables: &[Vec<f64>],
    q_n: usize,
) -> f64 {
    let mut ll = 0.0;
    for &j in items {
        let lam = params.lambda[j];
        let tau = params.tau[j];
        let r_j = &r_tables[j];
        for q in 0..q_n {
            let t = grid_nodes[q];
            for rr in 0..q_n {
                let idx = q * q_n + rr;
                let n = n_tables[idx];
                if n <= 0.0 {
                    continue;
                }
                let z = lam * (t + sigma * grid_nodes[rr]) - tau;
                ll += r_j[idx] * log_norm_cdf(z) + (n - r_j[idx]) * log_norm_cdf(-z);
            }
        }
    }
    ll
}

fn update_sigma(
    grid_nodes: &[f64],
    items: &[usize],
    params: &CondParams,
    sigma: f64,
    n_tables: &[f64],
    r_tables: &[Vec<f64>],
    q_n: usize,
    max_newton: usize,
) -> f64 {
    let sigma_max = SIGMA2_MAX.sqrt();
    let mut s = sigma;
    let mut ll = testlet_loglik(grid_nodes, items, params, s, n_tables, r_tables, q_n);
    for _ in 0..max_newton {
        // gradient and Fisher information in sigma
        let mut g = 0.0;
        let mut info = 0.0;
        for &j in items {
            let lam = params.lambda[j];
            let tau = params.tau[j];
            let r_j = &r_tables[j];
            for q in 0..q_n {
                let t = grid_nodes[q];
                for rr in 0..q_n {
                    let idx = q * q_n + rr;
                    let n = n_tables[idx];
                    if n <= 0.0 {
                        continue;
                    }
                    let dz = lam * grid_nodes[rr];
                    let z = lam * (t + s * grid_nodes[rr]) - tau;
                    let p = norm_cdf(z).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    let pdf = norm_pdf(z);
                    g += dz * pdf * (r_j[idx] - n * p) / (p * (1.0 - p));
                    info += n * dz * dz * pdf * pdf / (p * (1.0 - p));
                }
            }
        }
        if info.abs() < 1e-14 {
            break;
        }
        let delta = g / info;
        if delta.abs() < 1e-10 {
            break;
        }
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = (s + step * delta).clamp(0.0, sigma_max);
            let cand_ll =
                testlet_loglik(grid_nodes, items, params, cand, n_tables, r_tables, q_n);
            if cand_ll >= ll - 1e-12 {
                if (cand - s).abs() < 1e-12 {
                    s = cand;
                    improved = false;
                    break;
                }
                s = cand;
                ll = cand_ll;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    s
}

fn starting_values(data: &ResponseMatrix, design: &TestletDesign) -> CondParams {
    let n = data.n_persons() as f64;
    let n_items = data.n_items();
    let totals: Vec<f64> = (0..data.n_persons())
        .map(|i| data.row(i).iter().map(|&v| v as f64).sum())
        .collect();
    let total_mean: f64 = totals.iter().sum::<f64>() / n;
    let total_var: f64 = totals.iter().map(|t| (t - total_mean).powi(2)).sum::<f64>() / n;

    let mut lambda = Vec::with_capacity(n_items);
    let mut tau = Vec::with_capacity(n_items);
    let sigma2_start = 0.2;
    for j in 0..n_items {
        let p = data.proportion_correct(j);
        let tau_std = norm_quantile(1.0 - p);
        // biserial proxy for the standardized loading
        let mut cov = 0.0;
        for i in 0..data.n_persons() {
            cov += (data.get(i, j) as f64 - p) * (totals[i] - total_mean);
        }
        cov /= n;
        let r_pb = cov / (p * (1.0 - p) * total_var).sqrt().max(1e-12);
        let biserial = r_pb * (p * (1.0 - p)).sqrt() / norm_pdf(tau_std).max(1e-12);
        let lambda_std = biserial.clamp(0.05, 0.9);
        let comm = (lambda_std * lambda_std * (1.0 + sigma2_start)).min(0.95);
        let resid = (1.0 - comm).sqrt();
        lambda.push(lambda_std / resid);
        tau.push(tau_std / resid);
    }
    CondParams {
        lambda,
        tau,
        sigma: vec![sigma2_start.sqrt(); design.n_testlets()],
    }
}

/// Fit the testlet model by EM marginal maximum likelihood.
///
/// Identification: unit general-factor variance, orthogonal latent effects,
/// the testlet loading tied to the general loading with the testlet variance
/// free. Every item column must contain both response categories.
pub fn fit_mmle(
    data: &ResponseMatrix,
    design: &TestletDesign,
    quad: &QuadratureSpec,
    settings: &EmSettings,
) -> Result<FitResult> {
    let start = std::time::Instant::now();
    if data.n_items() != design.n_items() {
        return Err(Error::DimensionMismatch("data vs design".into()));
    }
    let constant = data.constant_columns();
    if !constant.is_empty() {
        return Err(Error::DegenerateData(format!(
            "constant response column(s): {constant:?}"
        )));
    }

    let rule = quad.rule();
    let q_n = rule.len();
    let mut params = starting_values(data, design);
    let mut loglik_prev = f64::NEG_INFINITY;
    let mut param_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut final_loglik = f64::NEG_INFINITY;

    for iter in 0..settings.max_iterations {
        iterations = iter + 1;
        let grid = Grid::new(design, &params, rule.clone());
        let tables = e_step(&grid, data);
        final_loglik = tables.loglik;
        if (tables.loglik - loglik_prev).abs() < settings.loglik_tol
            && param_change < settings.param_tol
        {
            converged = true;
            break;
        }
        loglik_prev = tables.loglik;

        let old = params.clone();

        // independent items: nodes are the theta grid
        for &j in &grid.indep {
            let (lam, tau) = update_item(
                &rule.nodes,
                &tables.r_ind[j],
                &tables.n_theta,
                params.lambda[j],
                params.tau[j],
                settings.newton_iterations,
            );
            params.lambda[j] = lam;
            params.tau[j] = tau;
        }

        // testlet items: nodes are theta + sigma*zeta on the joint grid
        for (d, items) in grid.testlets.iter().enumerate() {
            let sd = params.sigma[d];
            let mut u = Vec::with_capacity(q_n * q_n);
            for &t in &rule.nodes {
                for &zeta in &rule.nodes {
                    u.push(t + sd * zeta);
                }
            }
            for &j in items {
                let (lam, tau) = update_item(
                    &u,
                    &tables.r_tst[j],
                    &tables.n_tst[d],
                    params.lambda[j],
                    params.tau[j],
                    settings.newton_iterations,
                );
                params.lambda[j] = lam;
                params.tau[j] = tau;
            }
            params.sigma[d] = update_sigma(
                &rule.nodes,
                items,
                &params,
                params.sigma[d],
                &tables.n_tst[d],
                &tables.r_tst,
                q_n,
                settings.newton_iterations,
            );
        }

        param_change = params.max_abs_diff(&old);
    }

    let sigma2: Vec<f64> = params.sigma.iter().map(|s| s * s).collect();
    let mut result = FitResult::from_conditional(
        EstimatorKind::Mmle,
        &params.lambda,
        &params.tau,
        &sigma2,
        design,
        Some(final_loglik),
        converged,
        iterations,
        start.elapsed().as_secs_f64(),
    )?;
    if !converged {
        result.converged = false;
    }
    Ok(result)
}

/// EAP ability scores under a fitted model: posterior means of theta and of
/// each testlet effect, by the same nested quadrature.
pub fn score_eap(
    fit: &FitResult,
    data: &ResponseMatrix,
    design: &TestletDesign,
    quad: &QuadratureSpec,
) -> Result<PersonAbilities> {
    let params = CondParams::from_factor(&fit.factor, design)?;
    let rule = quad.rule();
    let q_n = rule.len();
    let grid = Grid::new(design, &params, rule.clone());
    let mut scratch = PersonScratch::new(&grid.rule, design.n_testlets());
    let n_testlets = design.n_testlets();

    let mut theta = Vec::with_capacity(data.n_persons());
    let mut gamma = vec![0.0; data.n_persons() * n_testlets];
    for i in 0..data.n_persons() {
        grid.person(data.row(i), &mut scratch);
        let mut t_hat = 0.0;
        for q in 0..q_n {
            t_hat += scratch.post_theta[q] * rule.nodes[q];
        }
        theta.push(t_hat);
        for d in 0..n_testlets {
            let sd = params.sigma[d];
            if sd == 0.0 {
                continue;
            }
            let log_b = &scratch.log_b[d];
            let s_d = &scratch.log_s[d];
            let mut g_hat = 0.0;
            for q in 0..q_n {
                let pt = scratch.post_theta[q];
                if pt < 1e-300 {
                    continue;
                }
                for r in 0..q_n {
                    let w = pt * (scratch.log_v[r] + log_b[q * q_n + r] - s_d[q]).exp();
                    g_hat += w * sd * rule.nodes[r];
                }
            }
            gamma[i * n_testlets + d] = g_hat;
        }
    }
    PersonAbilities::new(theta, gamma, n_testlets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TestletVariances;
    use approx::assert_abs_diff_eq;

    fn factor_for_probit_unit_slope() -> FactorParams {
        // probit slope 1, threshold 0: lambda = 1/sqrt(2)
        FactorParams::new(
            vec![std::f64::consts::FRAC_1_SQRT_2],
            vec![0.0],
            TestletVariances::zeros(0),
        )
        .unwrap()
    }

    #[test]
    fn single_symmetric_item_marginal_is_half() {
        let design = TestletDesign::independent(1);
        let data = ResponseMatrix::from_rows(vec![vec![1]]).unwrap();
        let fp = factor_for_probit_unit_slope();
        let ll = marginal_loglik(&fp, &data, &design, &QuadratureSpec::default()).unwrap();
        assert_abs_diff_eq!(ll, 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn two_item_testlet_pattern_probabilities_sum_to_one() {
        let design = TestletDesign::new(2, &[vec![0, 1]]).unwrap();
        let fp = FactorParams::new(
            vec![0.6, 0.45],
            vec![-0.2, 0.5],
            TestletVariances::new(vec![0.8]).unwrap(),
        )
        .unwrap();
        let quad = QuadratureSpec::default();
        let mut total = 0.0;
        for pattern in 0..4u8 {
            let row = vec![pattern & 1, (pattern >> 1) & 1];
            let data = ResponseMatrix::from_rows(vec![row]).unwrap();
            total += marginal_loglik(&fp, &data, &design, &quad).unwrap().exp();
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn nested_quadrature_equals_direct_grid() {
        // one testlet: the nested integral must equal brute-force 2-D
        // integration on the same nodes
        let design = TestletDesign::new(3, &[vec![0, 1, 2]]).unwrap();
        let fp = FactorParams::new(
            vec![0.55, 0.4, 0.3],
            vec![0.1, -0.4, 0.7],
            TestletVariances::new(vec![0.6]).unwrap(),
        )
        .unwrap();
        let data = ResponseMatrix::from_rows(vec![vec![1, 0, 1], vec![0, 0, 1]]).unwrap();
        let quad = QuadratureSpec { n_nodes: 21 };
        let nested = marginal_loglik(&fp, &data, &design, &quad).unwrap();

        // direct: joint product-rule quadrature over (theta, gamma)
        let params = CondParams::from_factor(&fp, &design).unwrap();
        let rule = gauss_hermite(21);
        let mut direct = 0.0;
        for i in 0..data.n_persons() {
            let row = data.row(i);
            let mut li = 0.0;
            for (qt, wt) in rule.nodes.iter().zip(&rule.weights) {
                for (qz, wz) in rule.nodes.iter().zip(&rule.weights) {
                    let mut prod = wt * wz;
                    for j in 0..3 {
                        let z = params.lambda[j] * (qt + params.sigma[0] * qz) - params.tau[j];
                        let p = norm_cdf(z);
                        prod *= if row[j] == 1 { p } else { 1.0 - p };
                    }
                    li += prod;
                }
            }
            direct += li.ln();
        }
        assert_abs_diff_eq!(nested, direct, epsilon = 1e-10);
    }

    #[test]
    fn posterior_weights_sum_to_one() {
        let design = TestletDesign::new(4, &[vec![0, 1], vec![2, 3]]).unwrap();
        let fp = FactorParams::new(
            vec![0.5, 0.4, 0.6, 0.3],
            vec![0.0, 0.2, -0.3, 0.1],
            TestletVariances::new(vec![0.5, 0.25]).unwrap(),
        )
        .unwrap();
        let params = CondParams::from_factor(&fp, &design).unwrap();
        let grid = Grid::new(&design, &params, gauss_hermite(15));
        let mut scratch = PersonScratch::new(&grid.rule, 2);
        let data = ResponseMatrix::from_rows(vec![vec![1, 0, 1, 1], vec![0, 0, 0, 1]]).unwrap();
        for i in 0..2 {
            grid.person(data.row(i), &mut scratch);
            let total: f64 = scratch.post_theta.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // gradient of the weighted probit block objective
        let u: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
        let n: Vec<f64> = u.iter().map(|x| 3.0 + x.abs()).collect();
        let r: Vec<f64> = n
            .iter()
            .zip(&u)
            .map(|(ni, ui)| ni * norm_cdf(0.7 * ui - 0.2) * 0.9)
            .collect();
        let (lam, tau) = (0.55, -0.35);
        let z: Vec<f64> = u.iter().map(|&ui| lam * ui - tau).collect();
        let (g, _) = item_grad_info(&u, &z, &r, &n);

        let h = 1e-5;
        let f = |l: f64, t: f64| {
            let z: Vec<f64> = u.iter().map(|&ui| l * ui - t).collect();
            block_loglik(&z, &r, &n)
        };
        let fd_l = (f(lam + h, tau) - f(lam - h, tau)) / (2.0 * h);
        let fd_t = (f(lam, tau + h) - f(lam, tau - h)) / (2.0 * h);
        assert!(((g[0] - fd_l) / fd_l).abs() < 1e-4, "{} vs {}", g[0], fd_l);
        assert!(((g[1] - fd_t) / fd_t).abs() < 1e-4, "{} vs {}", g[1], fd_t);
    }

    #[test]
    fn rejects_constant_column() {
        let design = TestletDesign::independent(2);
        let data = ResponseMatrix::from_rows(vec![vec![1, 0], vec![1, 1]]).unwrap();
        let err = fit_mmle(
            &data,
            &design,
            &QuadratureSpec::default(),
            &EmSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
    }
}
