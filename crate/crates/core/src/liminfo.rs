//! Limited-information estimation: univariate thresholds, pairwise
//! tetrachoric correlations, and a diagonally weighted least-squares fit of
//! the constrained bi-factor structure.
//!
//! Stage 1 reduces the data to thresholds and a tetrachoric correlation
//! matrix with per-pair asymptotic variances. Stage 2 minimizes the weighted
//! squared distance between sample and model-implied correlations. The
//! testlet variances are left unconstrained in the minimizer: a negative
//! estimate is the classic improper solution and is reported as a Heywood
//! flag rather than silently projected away, matching how such replications
//! are counted as non-converged.

use crate::design::{ResponseMatrix, TestletDesign};
use crate::error::{Error, Result};
use crate::fit::{EstimatorKind, FitResult};
use crate::model::{FactorParams, TestletVariances};
use crate::stats::normal::{bvn_cdf, bvn_pdf, norm_cdf, norm_quantile};

/// Clamp for tetrachoric estimates; hitting it flags a boundary solution.
pub const RHO_CLAMP: f64 = 0.999;

/// 2x2 contingency table for an item pair. Cell `n_ab` counts persons with
/// (y_j = a, y_k = b). Non-integer counts are allowed so that exact
/// quadrant-probability tables can be used as oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateTable {
    pub n00: f64,
    pub n01: f64,
    pub n10: f64,
    pub n11: f64,
}

impl BivariateTable {
    pub fn total(&self) -> f64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn from_data(data: &ResponseMatrix, j: usize, k: usize) -> Self {
        let mut t = BivariateTable {
            n00: 0.0,
            n01: 0.0,
            n10: 0.0,
            n11: 0.0,
        };
        for i in 0..data.n_persons() {
            match (data.get(i, j), data.get(i, k)) {
                (0, 0) => t.n00 += 1.0,
                (0, 1) => t.n01 += 1.0,
                (1, 0) => t.n10 += 1.0,
                _ => t.n11 += 1.0,
            }
        }
        t
    }
}

/// Stage-1 summary statistics.
#[derive(Debug, Clone)]
pub struct SampleStats {
    /// Per-item thresholds tau* = Phi^-1(proportion of zeros).
    pub thresholds: Vec<f64>,
    /// Tetrachoric correlation matrix (unit diagonal).
    pub tetra: Vec<Vec<f64>>,
    /// Asymptotic variance of each correlation estimate.
    pub asy_var: Vec<Vec<f64>>,
    /// Pairs whose estimate hit the clamp.
    pub boundary_pairs: Vec<(usize, usize)>,
}

/// Result of a single tetrachoric optimization.
#[derive(Debug, Clone, Copy)]
pub struct Tetrachoric {
    pub rho: f64,
    pub asy_var: f64,
    /// Estimate ran into the +-0.999 clamp.
    pub boundary: bool,
}

/// Thresholds under the convention P(y = 1) = Phi(z - tau*): tau* is the
/// normal quantile of the proportion of zero responses.
pub fn estimate_thresholds(data: &ResponseMatrix) -> Result<Vec<f64>> {
    let constant = data.constant_columns();
    if !constant.is_empty() {
        return Err(Error::DegenerateData(format!(
            "constant response column(s): {constant:?}"
        )));
    }
    Ok((0..data.n_items())
        .map(|j| norm_quantile(1.0 - data.proportion_correct(j)))
        .collect())
}

/// Quadrant probabilities of the latent bivariate normal given thresholds
/// and correlation. Ordered (p00, p01, p10, p11).
fn quadrant_probs(tau_j: f64, tau_k: f64, rho: f64) -> (f64, f64, f64, f64) {
    let p00 = bvn_cdf(tau_j, tau_k, rho);
    let pj0 = norm_cdf(tau_j);
    let pk0 = norm_cdf(tau_k);
    let p01 = (pj0 - p00).max(0.0);
    let p10 = (pk0 - p00).max(0.0);
    let p11 = (1.0 - pj0 - pk0 + p00).max(0.0);
    (p00, p01, p10, p11)
}

fn table_loglik(t: &BivariateTable, tau_j: f64, tau_k: f64, rho: f64) -> f64 {
    let (p00, p01, p10, p11) = quadrant_probs(tau_j, tau_k, rho);
    let mut ll = 0.0;
    let mut add = |n: f64, p: f64| {
        if n > 0.0 {
            ll += n * p.max(1e-300).ln();
        }
    };
    add(t.n00, p00);
    add(t.n01, p01);
    add(t.n10, p10);
    add(t.n11, p11);
    ll
}

/// The bracket sum of the likelihood score. By Plackett's identity
/// d loglik / d rho = phi2(tau_j, tau_k; rho) * bracket, and the density is
/// positive, so this carries the sign of the score without the density's
/// underflow at extreme correlations.
fn score_bracket(t: &BivariateTable, tau_j: f64, tau_k: f64, rho: f64) -> f64 {
    let (p00, p01, p10, p11) = quadrant_probs(tau_j, tau_k, rho);
    let mut s = 0.0;
    if t.n00 > 0.0 {
        s += t.n00 / p00.max(1e-300);
    }
    if t.n01 > 0.0 {
        s -= t.n01 / p01.max(1e-300);
    }
    if t.n10 > 0.0 {
        s -= t.n10 / p10.max(1e-300);
    }
    if t.n11 > 0.0 {
        s += t.n11 / p11.max(1e-300);
    }
    s
}

/// d loglik / d rho (full score, for the information computation).
fn table_score(t: &BivariateTable, tau_j: f64, tau_k: f64, rho: f64) -> f64 {
    bvn_pdf(tau_j, tau_k, rho) * score_bracket(t, tau_j, tau_k, rho)
}

/// Maximum-likelihood tetrachoric correlation for a 2x2 table with fixed
/// thresholds. The asymptotic variance comes from the observed information
/// (finite difference of the analytic score at the maximum).
pub fn tetrachoric(table: &BivariateTable, tau_j: f64, tau_k: f64) -> Result<Tetrachoric> {
    if table.total() <= 0.0
        || table.n00 < 0.0
        || table.n01 < 0.0
        || table.n10 < 0.0
        || table.n11 < 0.0
    {
        return Err(Error::DegenerateData("invalid 2x2 table".into()));
    }
    if !tau_j.is_finite() || !tau_k.is_finite() {
        return Err(Error::DegenerateData("non-finite threshold".into()));
    }

    let bracket = |rho: f64| score_bracket(table, tau_j, tau_k, rho);
    let g_lo = bracket(-RHO_CLAMP);
    let g_hi = bracket(RHO_CLAMP);

    let root = if g_lo > 0.0 && g_hi < 0.0 {
        // bisection on the sign of the score
        let mut lo = -RHO_CLAMP;
        let mut hi = RHO_CLAMP;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bracket(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    } else {
        None
    };

    // choose among the stationary point and the clamps by likelihood
    let ll_lo = table_loglik(table, tau_j, tau_k, -RHO_CLAMP);
    let ll_hi = table_loglik(table, tau_j, tau_k, RHO_CLAMP);
    let (rho_hat, boundary) = match root {
        Some(r) => {
            let ll_root = table_loglik(table, tau_j, tau_k, r);
            if ll_root >= ll_lo && ll_root >= ll_hi {
                (r, false)
            } else if ll_hi >= ll_lo {
                (RHO_CLAMP, true)
            } else {
                (-RHO_CLAMP, true)
            }
        }
        None => {
            if ll_hi >= ll_lo {
                (RHO_CLAMP, true)
            } else {
                (-RHO_CLAMP, true)
            }
        }
    };

    // observed information; fall back to expected information at the clamp
    let h = 1e-5;
    let hi_edge = (rho_hat + h).min(RHO_CLAMP);
    let lo_edge = (rho_hat - h).max(-RHO_CLAMP);
    let mut info = -(table_score(table, tau_j, tau_k, hi_edge)
        - table_score(table, tau_j, tau_k, lo_edge))
        / (hi_edge - lo_edge);
    if !(info.is_finite() && info > 0.0) {
        let (p00, p01, p10, p11) = quadrant_probs(tau_j, tau_k, rho_hat);
        let dens = bvn_pdf(tau_j, tau_k, rho_hat);
        let inv: f64 = [p00, p01, p10, p11]
            .iter()
            .map(|p| 1.0 / p.max(1e-12))
            .sum();
        info = table.total() * dens * dens * inv;
    }
    let asy_var = if info > 0.0 { 1.0 / info } else { f64::INFINITY };

    Ok(Tetrachoric {
        rho: rho_hat,
        asy_var,
        boundary,
    })
}

/// Stage 1 of the pipeline: thresholds plus the full tetrachoric matrix.
pub fn sample_stats(data: &ResponseMatrix) -> Result<SampleStats> {
    let thresholds = estimate_thresholds(data)?;
    let n = data.n_items();
    let mut tetra = vec![vec![0.0; n]; n];
    let mut asy_var = vec![vec![0.0; n]; n];
    let mut boundary_pairs = Vec::new();
    for j in 0..n {
        tetra[j][j] = 1.0;
        for k in 0..j {
            let table = BivariateTable::from_data(data, j, k);
            let est = tetrachoric(&table, thresholds[j], thresholds[k])?;
            tetra[j][k] = est.rho;
            tetra[k][j] = est.rho;
            asy_var[j][k] = est.asy_var;
            asy_var[k][j] = est.asy_var;
            if est.boundary {
                boundary_pairs.push((k, j));
            }
        }
    }
    Ok(SampleStats {
        thresholds,
        tetra,
        asy_var,
        boundary_pairs,
    })
}

/// DWLS objective and gradient over x = (lambda_0.., sigma2_0..).
struct DwlsProblem<'a> {
    stats: &'a SampleStats,
    design: &'a TestletDesign,
    weights: Vec<Vec<f64>>,
    n_items: usize,
    n_testlets: usize,
}

impl<'a> DwlsProblem<'a> {
    fn new(stats: &'a SampleStats, design: &'a TestletDesign) -> Self {
        let n = design.n_items();
        let mut weights = vec![vec![0.0; n]; n];
        for j in 0..n {
            for k in 0..j {
                let v = stats.asy_var[j][k];
                let w = if v.is_finite() && v > 1e-12 { 1.0 / v } else { 1e12 };
                weights[j][k] = w;
                weights[k][j] = w;
            }
        }
        Self {
            stats,
            design,
            weights,
            n_items: n,
            n_testlets: design.n_testlets(),
        }
    }

    fn dim(&self) -> usize {
        self.n_items + self.n_testlets
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (lambda, sigma2) = x.split_at(self.n_items);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut f = 0.0;
        for j in 0..self.n_items {
            for k in 0..j {
                let shared = match (self.design.testlet_of(j), self.design.testlet_of(k)) {
                    (Some(dj), Some(dk)) if dj == dk => Some(dj),
                    _ => None,
                };
                let c = 1.0 + shared.map_or(0.0, |d| sigma2[d]);
                let m = lambda[j] * lambda[k] * c;
                let resid = self.stats.tetra[j][k] - m;
                let w = self.weights[j][k];
                f += w * resid * resid;
                let back = -2.0 * w * resid;
                grad[j] += back * lambda[k] * c;
                grad[k] += back * lambda[j] * c;
                if let Some(d) = shared {
                    grad[self.n_items + d] += back * lambda[j] * lambda[k];
                }
            }
        }
        f
    }
}

/// Projected BFGS with Armijo backtracking. Returns (x, converged, iters).
fn minimize_bfgs(
    problem: &DwlsProblem<'_>,
    mut x: Vec<f64>,
    max_iters: usize,
) -> (Vec<f64>, bool, usize) {
    let dim = problem.dim();
    let mut h = vec![vec![0.0; dim]; dim];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut grad = vec![0.0; dim];
    let mut f = problem.value_grad(&x, &mut grad);
    let mut iters = 0;
    for it in 0..max_iters {
        iters = it + 1;
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < 1e-10 * (1.0 + f.abs()) {
            return (x, true, iters);
        }
        // direction = -H g
        let mut dir = vec![0.0; dim];
        for i in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += h[i][k] * grad[k];
            }
            dir[i] = -s;
        }
        let descent: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if descent >= 0.0 {
            // reset the approximation
            for (i, row) in h.iter_mut().enumerate() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if i == k { 1.0 } else { 0.0 };
                }
            }
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
        }
        let descent: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        let mut step = 1.0;
        let mut x_new = vec![0.0; dim];
        let mut grad_new = vec![0.0; dim];
        let mut f_new = f;
        let mut ok = false;
        for _ in 0..60 {
            for i in 0..dim {
                x_new[i] = x[i] + step * dir[i];
            }
            f_new = problem.value_grad(&x_new, &mut grad_new);
            if f_new <= f + 1e-4 * step * descent {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            return (x, gnorm < 1e-6 * (1.0 + f.abs()), iters);
        }
        // BFGS update
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let mut hy = vec![0.0; dim];
            for i in 0..dim {
                let mut v = 0.0;
                for k in 0..dim {
                    v += h[i][k] * y[k];
                }
                hy[i] = v;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let c1 = (sy + yhy) / (sy * sy);
            for i in 0..dim {
                for k in 0..dim {
                    h[i][k] += c1 * s[i] * s[k] - (hy[i] * s[k] + s[i] * hy[k]) / sy;
                }
            }
        }
        x = x_new;
        grad = grad_new;
        f = f_new;
        if s.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-14 {
            return (x, true, iters);
        }
    }
    (x, false, iters)
}

/// Rank-1 starting values from the leading eigenvector of the tetrachoric
/// matrix (power iteration).
fn dwls_start(stats: &SampleStats, design: &TestletDesign) -> Vec<f64> {
    let n = design.n_items();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut eig = 1.0;
    for _ in 0..200 {
        let mut next = vec![0.0; n];
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += stats.tetra[j][k] * v[k];
            }
            next[j] = s;
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break;
        }
        for x in &mut next {
            *x /= norm;
        }
        eig = norm;
        v = next;
    }
    let scale = eig.max(0.0).sqrt();
    let sign = if v.iter().sum::<f64>() >= 0.0 { 1.0 } else { -1.0 };
    let mut x: Vec<f64> = v
        .iter()
        .map(|vi| (sign * vi * scale).clamp(-0.95, 0.95))
        .collect();
    x.extend(std::iter::repeat(0.2).take(design.n_testlets()));
    x
}

/// Fit the constrained structure to stage-1 statistics by diagonally
/// weighted least squares; thresholds pass through from stage 1.
pub fn fit_dwls(stats: &SampleStats, design: &TestletDesign) -> Result<FitResult> {
    let start = std::time::Instant::now();
    let n = design.n_items();
    if stats.thresholds.len() != n || stats.tetra.len() != n {
        return Err(Error::DimensionMismatch("stats vs design".into()));
    }
    let problem = DwlsProblem::new(stats, design);

    let x0 = dwls_start(stats, design);
    let (mut x, mut converged, mut iters) = minimize_bfgs(&problem, x0.clone(), 500);

    // jittered restarts if the first minimization stalled
    if !converged {
        for attempt in 1..=3u64 {
            let mut xj = x0.clone();
            let mut rng_state = 0x9e3779b97f4a7c15u64.wrapping_mul(attempt + 1);
            for v in &mut xj {
                // tiny deterministic jitter
                rng_state = rng_state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let u = (rng_state >> 11) as f64 / (1u64 << 53) as f64;
                *v += 0.1 * (u - 0.5);
            }
            let (xr, ok, it) = minimize_bfgs(&problem, xj, 500);
            if ok {
                x = xr;
                converged = true;
                iters = it;
                break;
            }
        }
    }

    let (lambda, sigma2) = x.split_at(n);
    // canonical sign: mean loading positive
    let flip = if lambda.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let lambda: Vec<f64> = lambda.iter().map(|l| flip * l).collect();
    // near-zero negatives are boundary noise, not improper solutions
    let sigma2: Vec<f64> = sigma2
        .iter()
        .map(|&v| if v > -1e-8 && v < 0.0 { 0.0 } else { v })
        .collect();

    let tau: Vec<f64> = stats.thresholds.clone();
    let factor = FactorParams::new(
        lambda.clone(),
        tau,
        TestletVariances::new(sigma2.iter().map(|v| v.max(0.0)).collect())?,
    )?;
    let mut result = FitResult::from_standardized(
        EstimatorKind::Dwls,
        factor,
        sigma2,
        design,
        None,
        converged,
        iters,
        start.elapsed().as_secs_f64(),
    );
    if !converged && !result.heywood {
        result.converged = false;
    }
    Ok(result)
}

/// Convenience wrapper: stage 1 then stage 2 from raw data.
pub fn fit_dwls_from_data(data: &ResponseMatrix, design: &TestletDesign) -> Result<FitResult> {
    if data.n_items() != design.n_items() {
        return Err(Error::DimensionMismatch("data vs design".into()));
    }
    let stats = sample_stats(data)?;
    fit_dwls(&stats, design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::implied_tetrachorics;
    use approx::assert_abs_diff_eq;

    #[test]
    fn thresholds_match_normal_quantiles() {
        // proportion correct 0.5 -> tau* = 0; 0.84 -> about -0.9945
        let mut rows = Vec::new();
        for i in 0..100 {
            rows.push(vec![u8::from(i < 50), u8::from(i < 84), u8::from(i < 16)]);
        }
        let data = ResponseMatrix::from_rows(rows).unwrap();
        let tau = estimate_thresholds(&data).unwrap();
        assert_abs_diff_eq!(tau[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tau[1], -0.994458, epsilon = 1e-4);
        assert_abs_diff_eq!(tau[2], 0.994458, epsilon = 1e-4);
    }

    #[test]
    fn thresholds_reject_constant_column() {
        let data = ResponseMatrix::from_rows(vec![vec![1, 0], vec![1, 1]]).unwrap();
        assert!(matches!(
            estimate_thresholds(&data),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn tetrachoric_independence() {
        let t = BivariateTable {
            n00: 25.0,
            n01: 25.0,
            n10: 25.0,
            n11: 25.0,
        };
        let est = tetrachoric(&t, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(est.rho, 0.0, epsilon = 1e-10);
        assert!(!est.boundary);
        assert!(est.asy_var > 0.0);
    }

    #[test]
    fn tetrachoric_symmetric_association() {
        // [[40,10],[10,40]] with zero thresholds: the MLE solves
        // pi11 = 4 pi10, giving rho = sin(0.3 pi) = 0.809017
        let t = BivariateTable {
            n00: 40.0,
            n01: 10.0,
            n10: 10.0,
            n11: 40.0,
        };
        let est = tetrachoric(&t, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(est.rho, (0.3 * std::f64::consts::PI).sin(), epsilon = 1e-6);
    }

    #[test]
    fn tetrachoric_perfect_association_is_boundary() {
        let t = BivariateTable {
            n00: 50.0,
            n01: 0.0,
            n10: 0.0,
            n11: 50.0,
        };
        let est = tetrachoric(&t, 0.0, 0.0).unwrap();
        assert!(est.boundary);
        assert_abs_diff_eq!(est.rho, RHO_CLAMP, epsilon = 1e-12);
    }

    #[test]
    fn tetrachoric_consistent_on_exact_tables() {
        // tables built from exact quadrant probabilities recover rho0
        for &rho0 in &[-0.5, 0.0, 0.5] {
            for &(tj, tk) in &[(0.3, -0.6), (0.0, 0.0), (-1.0, 0.8)] {
                let (p00, p01, p10, p11) = quadrant_probs(tj, tk, rho0);
                let n = 1000.0;
                let t = BivariateTable {
                    n00: n * p00,
                    n01: n * p01,
                    n10: n * p10,
                    n11: n * p11,
                };
                let est = tetrachoric(&t, tj, tk).unwrap();
                assert_abs_diff_eq!(est.rho, rho0, epsilon = 1e-6);
            }
        }
    }

    fn noiseless_stats(fp: &FactorParams, design: &TestletDesign, weight: f64) -> SampleStats {
        let tetra = implied_tetrachorics(fp, design);
        let n = design.n_items();
        SampleStats {
            thresholds: fp.tau.clone(),
            tetra,
            asy_var: vec![vec![1.0 / weight; n]; n],
            boundary_pairs: Vec::new(),
        }
    }

    #[test]
    fn dwls_self_consistency() {
        // feeding implied correlations back recovers the parameters
        let design = TestletDesign::blocks(3, 4);
        let lambda: Vec<f64> = (0..12).map(|j| 0.25 + 0.04 * j as f64).collect();
        let fp = FactorParams::new(
            lambda.clone(),
            vec![0.1; 12],
            TestletVariances::new(vec![0.25, 0.5, 1.0]).unwrap(),
        )
        .unwrap();
        let stats = noiseless_stats(&fp, &design, 1.0);
        let fit = fit_dwls(&stats, &design).unwrap();
        assert!(fit.converged && !fit.heywood);
        for j in 0..12 {
            assert_abs_diff_eq!(fit.factor.lambda[j], lambda[j], epsilon = 1e-6);
        }
        for d in 0..3 {
            assert_abs_diff_eq!(
                fit.sigma2[d],
                fp.sigma2.as_slice()[d],
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn dwls_zero_variance_boundary_is_legal() {
        // a two-testlet design without independent items is not identified
        // (block loadings can trade off against the variances), so use three
        let design = TestletDesign::blocks(3, 3);
        let fp = FactorParams::new(
            (0..9).map(|j| 0.3 + 0.05 * j as f64).collect(),
            vec![0.0; 9],
            TestletVariances::new(vec![0.0, 0.0, 0.0]).unwrap(),
        )
        .unwrap();
        let stats = noiseless_stats(&fp, &design, 1.0);
        let fit = fit_dwls(&stats, &design).unwrap();
        assert!(!fit.heywood, "sigma2 = 0 at the boundary is not Heywood");
        for d in 0..3 {
            assert_abs_diff_eq!(fit.sigma2[d], 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn uls_equals_dwls_under_equal_weights() {
        let design = TestletDesign::blocks(3, 3);
        let fp = FactorParams::new(
            vec![0.3, 0.45, 0.5, 0.6, 0.35, 0.4, 0.55, 0.25, 0.45],
            vec![0.0; 9],
            TestletVariances::new(vec![0.4, 0.7, 0.2]).unwrap(),
        )
        .unwrap();
        // two equal-weight settings differing by a common factor give the
        // same minimizer
        let s1 = noiseless_stats(&fp, &design, 1.0);
        let s2 = noiseless_stats(&fp, &design, 25.0);
        let f1 = fit_dwls(&s1, &design).unwrap();
        let f2 = fit_dwls(&s2, &design).unwrap();
        for j in 0..9 {
            assert_abs_diff_eq!(f1.factor.lambda[j], f2.factor.lambda[j], epsilon = 1e-6);
            assert_abs_diff_eq!(f1.factor.lambda[j], fp.lambda[j], epsilon = 1e-6);
        }
    }
}
