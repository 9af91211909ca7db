//! Bayesian estimation by Metropolis-within-Gibbs.
//!
//! The sampler works in the conditional probit metric: per-item loading and
//! threshold with Gaussian random-walk updates, per-person trait and
//! per-person-per-testlet effects likewise, and a conjugate draw for each
//! testlet variance (the flat variance prior makes the full conditional an
//! inverse gamma). Proposal scales adapt toward 0.44 acceptance during
//! burn-in and freeze afterwards. Reflection invariance of the likelihood is
//! resolved by flipping (lambda, theta, gamma) jointly whenever the mean
//! loading goes negative.
//!
//! Convergence is judged by the potential scale reduction factor across
//! chains; sampling continues past the minimum iteration count until the
//! largest PSRF drops below the threshold or the iteration cap is reached.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::datagen::stream_rng;
use crate::design::{ResponseMatrix, TestletDesign};
use crate::error::{Error, Result};
use crate::fit::{EstimatorKind, FitResult};
use crate::stats::normal::{log_norm_cdf, norm_cdf, norm_quantile};

const CHAIN_STREAM_BASE: u64 = 0x4d43_0000;
const PPP_STREAM: u64 = 0x5050_5000;

/// Priors: normal on loadings and thresholds, inverse gamma on the testlet
/// variances. The default variance prior IG(-1, 0) is flat on (0, inf).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub loading_mean: f64,
    pub loading_var: f64,
    pub threshold_mean: f64,
    pub threshold_var: f64,
    /// Inverse-gamma shape for the testlet variances.
    pub variance_shape: f64,
    /// Inverse-gamma scale for the testlet variances.
    pub variance_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            loading_mean: 0.0,
            loading_var: 5.0,
            threshold_mean: 0.0,
            threshold_var: 5.0,
            variance_shape: -1.0,
            variance_scale: 0.0,
        }
    }
}

/// Chain layout and run length.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ChainSpec {
    pub n_chains: usize,
    pub min_iterations: usize,
    /// Fraction of each chain discarded as burn-in.
    pub burn_in: f64,
    /// Keep every k-th retained draw for summaries and diagnostics.
    pub thinning: usize,
    pub psrf_threshold: f64,
    pub seed: u64,
    /// Hard cap as a multiple of `min_iterations`.
    pub max_factor: usize,
    /// Target number of joint states kept for posterior predictive checks.
    pub ppp_draws: usize,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            n_chains: 4,
            min_iterations: 4_000,
            burn_in: 0.5,
            thinning: 1,
            psrf_threshold: 1.1,
            seed: 0,
            max_factor: 10,
            ppp_draws: 200,
        }
    }
}

impl ChainSpec {
    /// The run length used for the published study: four chains of at least
    /// 20,000 iterations.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            min_iterations: 20_000,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::InvalidConfig("PSRF needs at least 2 chains".into()));
        }
        if !(self.burn_in > 0.0 && self.burn_in < 1.0) {
            return Err(Error::InvalidConfig(
                "burn-in fraction must be in (0,1)".into(),
            ));
        }
        if self.min_iterations < 20 {
            return Err(Error::InvalidConfig("min_iterations too small".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidConfig("thinning must be >= 1".into()));
        }
        Ok(())
    }
}

/// One full joint state retained for posterior predictive checking.
#[derive(Debug, Clone)]
pub struct JointDraw {
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub theta: Vec<f64>,
    /// persons x testlets, row-major.
    pub gamma: Vec<f64>,
}

/// Per-parameter posterior summary.
#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub psrf: f64,
}

/// Posterior summaries, convergence diagnostics, and retained draws.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
    pub psrf_max: f64,
    pub converged: bool,
    pub ppp: f64,
    pub n_retained: usize,
    pub total_iterations: usize,
    /// Joint states available for posterior predictive checks.
    pub joint_draws: Vec<JointDraw>,
}

/// Gelman-Rubin potential scale reduction factor for one parameter.
///
/// `chains` holds the retained draws of each chain (equal lengths).
/// R = sqrt(((n-1)/n W + B/n) / W) with W the mean within-chain variance and
/// B = n times the variance of the chain means.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InvalidConfig("PSRF needs at least 2 chains".into()));
    }
    let n = chains[0].len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "PSRF needs chains of length >= 2".into(),
        ));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch("unequal chain lengths".into()));
    }
    let nf = n as f64;
    let m = chains.len() as f64;
    let mut means = Vec::with_capacity(chains.len());
    let mut within = 0.0;
    for c in chains {
        let mu: f64 = c.iter().sum::<f64>() / nf;
        let var: f64 = c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (nf - 1.0);
        means.push(mu);
        within += var;
    }
    let within = within / m;
    if within <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let grand: f64 = means.iter().sum::<f64>() / m;
    let between =
        nf * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (m - 1.0);
    Ok((((nf - 1.0) / nf * within + between / nf) / within).sqrt())
}

/// Which blocks a sampler run updates; tests freeze blocks to compare
/// against dense-grid posteriors.
#[derive(Debug, Clone, Copy)]
struct SamplerOptions {
    update_items: bool,
    update_latents: bool,
    update_sigma: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            update_items: true,
            update_latents: true,
            update_sigma: true,
        }
    }
}

struct AdaptiveScale {
    scale: f64,
    accepted: u32,
    attempted: u32,
}

impl AdaptiveScale {
    fn new(scale: f64) -> Self {
        Self {
            scale,
            accepted: 0,
            attempted: 0,
        }
    }

    fn record(&mut self, accepted: bool) {
        self.attempted += 1;
        if accepted {
            self.accepted += 1;
        }
    }

    fn adapt(&mut self, batch: usize) {
        if self.attempted == 0 {
            return;
        }
        let rate = self.accepted as f64 / self.attempted as f64;
        let step = (rate - 0.44) / ((batch + 1) as f64).sqrt();
        self.scale *= step.clamp(-0.5, 0.5).exp();
        self.scale = self.scale.clamp(1e-4, 20.0);
        self.accepted = 0;
        self.attempted = 0;
    }
}

/// One Markov chain over the full parameter state.
struct Chain<'a> {
    data: &'a ResponseMatrix,
    design: &'a TestletDesign,
    priors: PriorSpec,
    options: SamplerOptions,
    rng: ChaCha8Rng,
    // state (conditional probit metric)
    lambda: Vec<f64>,
    tau: Vec<f64>,
    sigma2: Vec<f64>,
    theta: Vec<f64>,
    gamma: Vec<f64>,
    // cached per-cell response log-likelihood
    cell_ll: Vec<f64>,
    // proposal scales
    s_lambda: Vec<AdaptiveScale>,
    s_tau: Vec<AdaptiveScale>,
    s_theta: Vec<AdaptiveScale>,
    s_gamma: Vec<AdaptiveScale>,
    // bookkeeping
    iterations_done: usize,
    adapt_until: usize,
    batch: usize,
    // traces of structural parameters: [param][iteration]
    traces: Vec<Vec<f64>>,
    // joint snapshots for PPP: (iteration, state)
    snapshots: Vec<(usize, JointDraw)>,
    snapshot_stride: usize,
    testlet_items: Vec<Vec<usize>>,
}

impl<'a> Chain<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        data: &'a ResponseMatrix,
        design: &'a TestletDesign,
        priors: PriorSpec,
        options: SamplerOptions,
        seed: u64,
        chain_idx: usize,
        adapt_until: usize,
        snapshot_stride: usize,
        init: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    ) -> Self {
        let n = data.n_persons();
        let j_n = data.n_items();
        let d_n = design.n_testlets();
        let mut rng = stream_rng(seed, CHAIN_STREAM_BASE + chain_idx as u64);

        let (lambda, tau, sigma2) = init.unwrap_or_else(|| {
            // overdispersed starts around crude univariate values
            let shift: f64 = rng.gen_range(-0.5..0.5);
            let lam0: f64 = rng.gen_range(0.3..1.2);
            let lambda = (0..j_n)
                .map(|_| lam0 + rng.gen_range(-0.1..0.1))
                .collect();
            let tau = (0..j_n)
                .map(|j| {
                    let p = data.proportion_correct(j).clamp(0.01, 0.99);
                    norm_quantile(1.0 - p) + shift
                })
                .collect();
            let sigma2 = (0..d_n).map(|_| rng.gen_range(0.05..1.0)).collect();
            (lambda, tau, sigma2)
        });
        let theta: Vec<f64> = (0..n).map(|_| 0.5 * rng.gen_range(-1.0..1.0)).collect();
        let gamma = vec![0.0; n * d_n];

        let n_struct = 2 * j_n + d_n;
        let mut chain = Self {
            data,
            design,
            priors,
            options,
            rng,
            lambda,
            tau,
            sigma2,
            theta,
            gamma,
            cell_ll: vec![0.0; n * j_n],
            s_lambda: (0..j_n).map(|_| AdaptiveScale::new(0.1)).collect(),
            s_tau: (0..j_n).map(|_| AdaptiveScale::new(0.1)).collect(),
            s_theta: (0..n).map(|_| AdaptiveScale::new(0.6)).collect(),
            s_gamma: (0..n * d_n).map(|_| AdaptiveScale::new(0.6)).collect(),
            iterations_done: 0,
            adapt_until,
            batch: 0,
            traces: vec![Vec::new(); n_struct],
            snapshots: Vec::new(),
            snapshot_stride: snapshot_stride.max(1),
            testlet_items: (0..d_n).map(|d| design.items_in(d)).collect(),
        };
        chain.refresh_cell_ll();
        chain
    }

    #[inline]
    fn eff_ability(&self, i: usize, j: usize) -> f64 {
        let d_n = self.design.n_testlets();
        match self.design.testlet_of(j) {
            Some(d) => self.theta[i] + self.gamma[i * d_n + d],
            None => self.theta[i],
        }
    }

    #[inline]
    fn cell_loglik(&self, i: usize, j: usize, lambda: f64, tau: f64, ability: f64) -> f64 {
        let z = lambda * ability - tau;
        if self.data.get(i, j) == 1 {
            log_norm_cdf(z)
        } else {
            log_norm_cdf(-z)
        }
    }

    fn refresh_cell_ll(&mut self) {
        let j_n = self.data.n_items();
        for i in 0..self.data.n_persons() {
            for j in 0..j_n {
                self.cell_ll[i * j_n + j] =
                    self.cell_loglik(i, j, self.lambda[j], self.tau[j], self.eff_ability(i, j));
            }
        }
    }

    fn update_item(&mut self, j: usize) {
        let n = self.data.n_persons();
        let j_n = self.data.n_items();
        // loading
        let prop = self.lambda[j] + self.s_lambda[j].scale * standard_normal(&mut self.rng);
        let mut delta = log_normal_prior(prop, self.priors.loading_mean, self.priors.loading_var)
            - log_normal_prior(
                self.lambda[j],
                self.priors.loading_mean,
                self.priors.loading_var,
            );
        let mut new_ll = Vec::with_capacity(n);
        for i in 0..n {
            let ll = self.cell_loglik(i, j, prop, self.tau[j], self.eff_ability(i, j));
            delta += ll - self.cell_ll[i * j_n + j];
            new_ll.push(ll);
        }
        let acc = accept(&mut self.rng, delta);
        if acc {
            self.lambda[j] = prop;
            for (i, ll) in new_ll.into_iter().enumerate() {
                self.cell_ll[i * j_n + j] = ll;
            }
        }
        self.s_lambda[j].record(acc);

        // threshold
        let prop = self.tau[j] + self.s_tau[j].scale * standard_normal(&mut self.rng);
        let mut delta =
            log_normal_prior(prop, self.priors.threshold_mean, self.priors.threshold_var)
                - log_normal_prior(
                    self.tau[j],
                    self.priors.threshold_mean,
                    self.priors.threshold_var,
                );
        let mut new_ll = Vec::with_capacity(n);
        for i in 0..n {
            let ll = self.cell_loglik(i, j, self.lambda[j], prop, self.eff_ability(i, j));
            delta += ll - self.cell_ll[i * j_n + j];
            new_ll.push(ll);
        }
        let acc_t = accept(&mut self.rng, delta);
        if acc_t {
            self.tau[j] = prop;
            for (i, ll) in new_ll.into_iter().enumerate() {
                self.cell_ll[i * j_n + j] = ll;
            }
        }
        self.s_tau[j].record(acc_t);
    }

    fn update_person(&mut self, i: usize) {
        let j_n = self.data.n_items();
        let d_n = self.design.n_testlets();

        // general trait
        let cur = self.theta[i];
        let prop = cur + self.s_theta[i].scale * standard_normal(&mut self.rng);
        let mut delta = -0.5 * (prop * prop - cur * cur); // N(0,1) prior
        let mut new_ll = vec![0.0f64; j_n];
        for j in 0..j_n {
            let ability = match self.design.testlet_of(j) {
                Some(d) => prop + self.gamma[i * d_n + d],
                None => prop,
            };
            let ll = self.cell_loglik(i, j, self.lambda[j], self.tau[j], ability);
            delta += ll - self.cell_ll[i * j_n + j];
            new_ll[j] = ll;
        }
        let acc = accept(&mut self.rng, delta);
        if acc {
            self.theta[i] = prop;
            self.cell_ll[i * j_n..(i + 1) * j_n].copy_from_slice(&new_ll);
        }
        self.s_theta[i].record(acc);

        // testlet effects
        for d in 0..d_n {
            let s2 = self.sigma2[d].max(1e-12);
            let idx = i * d_n + d;
            let cur = self.gamma[idx];
            let prop = cur + self.s_gamma[idx].scale * standard_normal(&mut self.rng);
            let mut delta = -0.5 * (prop * prop - cur * cur) / s2;
            let items = &self.testlet_items[d];
            let mut new_vals = vec![0.0f64; items.len()];
            for (t, &j) in items.iter().enumerate() {
                let ability = self.theta[i] + prop;
                let ll = self.cell_loglik(i, j, self.lambda[j], self.tau[j], ability);
                delta += ll - self.cell_ll[i * j_n + j];
                new_vals[t] = ll;
            }
            let acc = accept(&mut self.rng, delta);
            if acc {
                self.gamma[idx] = prop;
                for (t, &j) in items.iter().enumerate() {
                    self.cell_ll[i * j_n + j] = new_vals[t];
                }
            }
            self.s_gamma[idx].record(acc);
        }
    }

    fn update_sigma(&mut self) {
        let n = self.data.n_persons();
        let d_n = self.design.n_testlets();
        for d in 0..d_n {
            let ssq: f64 = (0..n).map(|i| self.gamma[i * d_n + d].powi(2)).sum();
            let shape = self.priors.variance_shape + 0.5 * n as f64;
            let scale = self.priors.variance_scale + 0.5 * ssq;
            if shape <= 0.0 || scale <= 0.0 {
                // improper full conditional (tiny n or all-zero effects):
                // leave the variance untouched this sweep
                continue;
            }
            let g = Gamma::new(shape, 1.0).expect("valid gamma parameters");
            let draw: f64 = g.sample(&mut self.rng);
            if draw > 0.0 {
                self.sigma2[d] = scale / draw;
            }
        }
    }

    /// Resolve the reflection invariance: flip (lambda, theta, gamma) when
    /// the mean loading is negative. The likelihood is unchanged.
    fn identify_sign(&mut self) {
        let mean: f64 = self.lambda.iter().sum::<f64>() / self.lambda.len() as f64;
        if mean < 0.0 {
            for l in &mut self.lambda {
                *l = -*l;
            }
            for t in &mut self.theta {
                *t = -*t;
            }
            for g in &mut self.gamma {
                *g = -*g;
            }
        }
    }

    fn run(&mut self, target_iterations: usize) -> Result<()> {
        let j_n = self.data.n_items();
        while self.iterations_done < target_iterations {
            if self.options.update_items {
                for j in 0..j_n {
                    self.update_item(j);
                }
            }
            if self.options.update_latents {
                for i in 0..self.data.n_persons() {
                    self.update_person(i);
                }
            }
            if self.options.update_sigma {
                self.update_sigma();
            }
            if self.options.update_items && self.options.update_latents {
                self.identify_sign();
            }

            let it = self.iterations_done;
            // adaptation in batches of 50 during the fixed warmup window
            if it < self.adapt_until && (it + 1) % 50 == 0 {
                let b = self.batch;
                for s in self
                    .s_lambda
                    .iter_mut()
                    .chain(self.s_tau.iter_mut())
                    .chain(self.s_theta.iter_mut())
                    .chain(self.s_gamma.iter_mut())
                {
                    s.adapt(b);
                }
                self.batch += 1;
            }

            for (p, l) in self.lambda.iter().enumerate() {
                self.traces[p].push(*l);
            }
            for (p, t) in self.tau.iter().enumerate() {
                self.traces[j_n + p].push(*t);
            }
            for (p, s) in self.sigma2.iter().enumerate() {
                self.traces[2 * j_n + p].push(*s);
            }

            if self.snapshot_stride != usize::MAX && (it + 1) % self.snapshot_stride == 0 {
                self.snapshots.push((
                    it,
                    JointDraw {
                        lambda: self.lambda.clone(),
                        tau: self.tau.clone(),
                        sigma2: self.sigma2.clone(),
                        theta: self.theta.clone(),
                        gamma: self.gamma.clone(),
                    },
                ));
            }

            self.iterations_done += 1;

            if !self.state_finite() {
                return Err(Error::ChainDivergence(self.iterations_done));
            }
        }
        Ok(())
    }

    fn state_finite(&self) -> bool {
        self.lambda.iter().all(|v| v.is_finite())
            && self.tau.iter().all(|v| v.is_finite())
            && self.sigma2.iter().all(|v| v.is_finite())
            && self.theta.iter().all(|v| v.is_finite())
            && self.gamma.iter().all(|v| v.is_finite())
    }
}

#[inline]
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

#[inline]
fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    if !log_ratio.is_finite() {
        return false;
    }
    log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
}

#[inline]
fn log_normal_prior(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean) * (x - mean) / var
}

fn param_names(j_n: usize, d_n: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(2 * j_n + d_n);
    for j in 0..j_n {
        names.push(format!("lambda[{j}]"));
    }
    for j in 0..j_n {
        names.push(format!("tau[{j}]"));
    }
    for d in 0..d_n {
        names.push(format!("sigma2[{d}]"));
    }
    names
}

/// Fit the testlet model by MCMC: sample the posterior, assess convergence
/// with PSRF across chains, and summarize with posterior means.
pub fn fit_mcmc(
    data: &ResponseMatrix,
    design: &TestletDesign,
    priors: &PriorSpec,
    chains: &ChainSpec,
) -> Result<(FitResult, PosteriorSummary)> {
    let start = std::time::Instant::now();
    chains.validate()?;
    if data.n_items() != design.n_items() {
        return Err(Error::DimensionMismatch("data vs design".into()));
    }
    if data.n_persons() < 10 {
        return Err(Error::DegenerateData(
            "too few persons for posterior sampling".into(),
        ));
    }

    let j_n = data.n_items();
    let d_n = design.n_testlets();
    let adapt_until = ((chains.min_iterations as f64) * chains.burn_in) as usize;
    let per_chain_ppp = (chains.ppp_draws / chains.n_chains).max(8);
    let retained_at_min =
        chains.min_iterations - (chains.min_iterations as f64 * chains.burn_in) as usize;
    let snapshot_stride = (retained_at_min / per_chain_ppp).max(1);

    let mut chain_states: Vec<Chain<'_>> = (0..chains.n_chains)
        .map(|c| {
            Chain::new(
                data,
                design,
                *priors,
                SamplerOptions::default(),
                chains.seed,
                c,
                adapt_until,
                snapshot_stride,
                None,
            )
        })
        .collect();

    let cap = chains.min_iterations * chains.max_factor.max(1);
    let mut target = chains.min_iterations;
    let names = param_names(j_n, d_n);
    let (psrf_max, summaries, n_retained, total_iterations) = loop {
        let results: Vec<Result<()>> = chain_states
            .par_iter_mut()
            .map(|c| c.run(target))
            .collect();
        for r in results {
            r?;
        }

        let total = target;
        let burn = (total as f64 * chains.burn_in) as usize;
        let mut psrf_max: f64 = 0.0;
        let mut summaries = Vec::with_capacity(names.len());
        let mut n_retained = 0;
        for (p, name) in names.iter().enumerate() {
            let slices: Vec<Vec<f64>> = chain_states
                .iter()
                .map(|c| {
                    c.traces[p][burn..]
                        .iter()
                        .step_by(chains.thinning)
                        .copied()
                        .collect()
                })
                .collect();
            n_retained = slices.iter().map(|s| s.len()).sum();
            let r = match psrf(&slices) {
                Ok(r) => r,
                Err(Error::ZeroVariance) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            psrf_max = psrf_max.max(r);
            let pooled: Vec<f64> = slices.into_iter().flatten().collect();
            let mean: f64 = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let sd: f64 = (pooled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (pooled.len() as f64 - 1.0))
                .sqrt();
            summaries.push(ParamSummary {
                name: name.clone(),
                mean,
                sd,
                psrf: r,
            });
        }

        if psrf_max < chains.psrf_threshold || target >= cap {
            break (psrf_max, summaries, n_retained, total);
        }
        target = (target + chains.min_iterations / 2).min(cap);
    };

    let converged = psrf_max < chains.psrf_threshold;

    // posterior means in the conditional metric
    let lambda_hat: Vec<f64> = summaries[..j_n].iter().map(|s| s.mean).collect();
    let tau_hat: Vec<f64> = summaries[j_n..2 * j_n].iter().map(|s| s.mean).collect();
    let sigma2_hat: Vec<f64> = summaries[2 * j_n..].iter().map(|s| s.mean).collect();

    // joint states inside the final retained window
    let burn = (total_iterations as f64 * chains.burn_in) as usize;
    let mut joint_draws = Vec::new();
    for c in &chain_states {
        for (it, s) in &c.snapshots {
            if *it >= burn {
                joint_draws.push(s.clone());
            }
        }
    }

    let ppp = if joint_draws.len() >= 100 {
        posterior_predictive_p(&joint_draws, data, design, chains.seed)?
    } else {
        f64::NAN
    };

    let mut fit = FitResult::from_conditional(
        EstimatorKind::Mcmc,
        &lambda_hat,
        &tau_hat,
        &sigma2_hat,
        design,
        None,
        converged,
        total_iterations,
        start.elapsed().as_secs_f64(),
    )?;
    fit.converged = converged;

    Ok((
        fit,
        PosteriorSummary {
            params: summaries,
            psrf_max,
            converged,
            ppp,
            n_retained,
            total_iterations,
            joint_draws,
        },
    ))
}

/// Fraction of replicate discrepancies at least as large as the observed
/// ones; ties count in favor of the replicate.
pub fn ppp_from_discrepancies(observed: &[f64], replicated: &[f64]) -> f64 {
    assert_eq!(observed.len(), replicated.len());
    let hits = observed
        .iter()
        .zip(replicated)
        .filter(|(o, r)| r >= o)
        .count();
    hits as f64 / observed.len() as f64
}

/// Posterior predictive p-value over retained joint states.
///
/// The discrepancy is the sum of squared standardized residuals of the item
/// proportions plus squared log-odds-ratio residuals over all item pairs,
/// each measured against the model expectation under the drawn state. This
/// is a documented in-house choice; values are comparable across fits of
/// this crate, not numerically to other software.
pub fn posterior_predictive_p(
    draws: &[JointDraw],
    data: &ResponseMatrix,
    design: &TestletDesign,
    seed: u64,
) -> Result<f64> {
    if draws.len() < 100 {
        return Err(Error::InvalidConfig(format!(
            "posterior predictive check needs >= 100 draws, got {}",
            draws.len()
        )));
    }
    let n = data.n_persons();
    let j_n = data.n_items();
    let d_n = design.n_testlets();
    let mut rng = stream_rng(seed, PPP_STREAM);

    // observed pairwise tables are fixed across draws
    let obs_logor = pairwise_logor_from_data(data);
    let obs_prop: Vec<f64> = (0..j_n).map(|j| data.proportion_correct(j)).collect();

    let mut d_obs = Vec::with_capacity(draws.len());
    let mut d_rep = Vec::with_capacity(draws.len());
    let mut probs = vec![0.0f64; n * j_n];
    let mut rep = vec![0u8; n * j_n];

    for draw in draws {
        for i in 0..n {
            for j in 0..j_n {
                let ability = match design.testlet_of(j) {
                    Some(d) => draw.theta[i] + draw.gamma[i * d_n + d],
                    None => draw.theta[i],
                };
                probs[i * j_n + j] = norm_cdf(draw.lambda[j] * ability - draw.tau[j]);
            }
        }
        for (cell, p) in rep.iter_mut().zip(&probs) {
            *cell = u8::from(rng.gen::<f64>() < *p);
        }

        // expected item proportions and their sampling variances
        let mut exp_prop = vec![0.0; j_n];
        let mut var_prop = vec![0.0; j_n];
        for j in 0..j_n {
            let mut e = 0.0;
            let mut v = 0.0;
            for i in 0..n {
                let p = probs[i * j_n + j];
                e += p;
                v += p * (1.0 - p);
            }
            exp_prop[j] = e / n as f64;
            var_prop[j] = (v / (n as f64 * n as f64)).max(1e-12);
        }
        let rep_prop: Vec<f64> = (0..j_n)
            .map(|j| (0..n).map(|i| rep[i * j_n + j] as f64).sum::<f64>() / n as f64)
            .collect();

        let model_logor = pairwise_logor_from_probs(&probs, n, j_n);
        let rep_logor = pairwise_logor_from_flat(&rep, n, j_n);

        let mut obs_d = 0.0;
        let mut rep_d = 0.0;
        for j in 0..j_n {
            obs_d += (obs_prop[j] - exp_prop[j]).powi(2) / var_prop[j];
            rep_d += (rep_prop[j] - exp_prop[j]).powi(2) / var_prop[j];
        }
        for idx in 0..obs_logor.len() {
            obs_d += (obs_logor[idx] - model_logor[idx]).powi(2);
            rep_d += (rep_logor[idx] - model_logor[idx]).powi(2);
        }
        d_obs.push(obs_d);
        d_rep.push(rep_d);
    }
    Ok(ppp_from_discrepancies(&d_obs, &d_rep))
}

fn logor(n11: f64, n10: f64, n01: f64, n00: f64) -> f64 {
    ((n11 + 0.5) * (n00 + 0.5) / ((n10 + 0.5) * (n01 + 0.5))).ln()
}

fn pairwise_logor_from_data(data: &ResponseMatrix) -> Vec<f64> {
    let n = data.n_persons();
    let j_n = data.n_items();
    let mut flat = Vec::with_capacity(n * j_n);
    for i in 0..n {
        flat.extend_from_slice(data.row(i));
    }
    pairwise_logor_from_flat(&flat, n, j_n)
}

fn pairwise_logor_from_flat(flat: &[u8], n: usize, j_n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(j_n * (j_n - 1) / 2);
    for j in 0..j_n {
        for k in 0..j {
            let (mut n11, mut n10, mut n01) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let yj = flat[i * j_n + j];
                let yk = flat[i * j_n + k];
                match (yj, yk) {
                    (1, 1) => n11 += 1.0,
                    (1, 0) => n10 += 1.0,
                    (0, 1) => n01 += 1.0,
                    _ => {}
                }
            }
            let n00 = n as f64 - n11 - n10 - n01;
            out.push(logor(n11, n10, n01, n00));
        }
    }
    out
}

fn pairwise_logor_from_probs(probs: &[f64], n: usize, j_n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(j_n * (j_n - 1) / 2);
    for j in 0..j_n {
        for k in 0..j {
            let (mut n11, mut n10, mut n01) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let pj = probs[i * j_n + j];
                let pk = probs[i * j_n + k];
                n11 += pj * pk;
                n10 += pj * (1.0 - pk);
                n01 += (1.0 - pj) * pk;
            }
            let n00 = n as f64 - n11 - n10 - n01;
            out.push(logor(n11, n10, n01, n00));
        }
    }
    out
}

/// Test seam: sample only the latent abilities with the structural
/// parameters frozen at the given conditional-metric values. Returns the
/// retained draws of (theta, gamma) per iteration.
#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn sample_latents_fixed(
    lambda: &[f64],
    tau: &[f64],
    sigma2: &[f64],
    data: &ResponseMatrix,
    design: &TestletDesign,
    n_iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut chain = Chain::new(
        data,
        design,
        PriorSpec::default(),
        SamplerOptions {
            update_items: false,
            update_latents: true,
            update_sigma: false,
        },
        seed,
        0,
        burn_in,
        usize::MAX,
        Some((lambda.to_vec(), tau.to_vec(), sigma2.to_vec())),
    );
    let mut out = Vec::with_capacity(n_iterations.saturating_sub(burn_in));
    for it in 0..n_iterations {
        chain.run(it + 1)?;
        if it >= burn_in {
            out.push((chain.theta.clone(), chain.gamma.clone()));
        }
    }
    Ok(out)
}

/// Test seam: sample only the structural parameters with the abilities
/// frozen. Returns retained draws of (lambda, tau) per iteration.
#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn sample_structural_fixed(
    theta: &[f64],
    gamma: &[f64],
    data: &ResponseMatrix,
    design: &TestletDesign,
    priors: &PriorSpec,
    n_iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut chain = Chain::new(
        data,
        design,
        *priors,
        SamplerOptions {
            update_items: true,
            update_latents: false,
            update_sigma: false,
        },
        seed,
        0,
        burn_in,
        usize::MAX,
        None,
    );
    chain.theta = theta.to_vec();
    chain.gamma = gamma.to_vec();
    chain.refresh_cell_ll();
    let mut out = Vec::with_capacity(n_iterations.saturating_sub(burn_in));
    for it in 0..n_iterations {
        chain.run(it + 1)?;
        if it >= burn_in {
            out.push((chain.lambda.clone(), chain.tau.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn psrf_iid_chains_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..10_000).map(|_| standard_normal(&mut rng)).collect())
            .collect();
        let r = psrf(&chains).unwrap();
        assert!((0.999..=1.01).contains(&r), "psrf {r}");
    }

    #[test]
    fn psrf_hand_example() {
        // identical spreads, identical means: B = 0, R = sqrt((n-1)/n)
        let chains = vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]];
        let r = psrf(&chains).unwrap();
        assert_abs_diff_eq!(r, (3.0f64 / 4.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn psrf_zero_within_variance_errors() {
        let chains = vec![vec![1.0; 50], vec![2.0; 50]];
        assert!(matches!(psrf(&chains), Err(Error::ZeroVariance)));
    }

    #[test]
    fn psrf_shape_checks() {
        assert!(psrf(&[vec![1.0, 2.0]]).is_err());
        assert!(psrf(&[vec![1.0, 2.0], vec![1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn ppp_counts_ties_as_hits() {
        let d = vec![1.0; 64];
        assert_eq!(ppp_from_discrepancies(&d, &d), 1.0);
        let lower: Vec<f64> = d.iter().map(|x| x - 0.5).collect();
        assert_eq!(ppp_from_discrepancies(&d, &lower), 0.0);
    }

    #[test]
    fn fit_mcmc_rejects_degenerate_data() {
        let design = TestletDesign::independent(2);
        let data = ResponseMatrix::from_rows(vec![vec![0, 1], vec![1, 0]]).unwrap();
        let err = fit_mcmc(&data, &design, &PriorSpec::default(), &ChainSpec::default());
        assert!(matches!(err, Err(Error::DegenerateData(_))));
    }
}
