//! Model core: the 2PL testlet response function, its constrained bi-factor
//! counterpart, and conversions between the logistic IRT metric and the
//! standardized factor-analytic metric.
//!
//! The testlet model gives person i's success probability on item j as
//! `1 / (1 + exp(-a_j (theta_i - b_j - gamma_{i,d(j)})))`; the person-level
//! testlet effect gamma has variance sigma2_d. Internally the same model is
//! a bi-factor model in which each item loads on the general factor and on
//! its testlet factor with one shared loading, the testlet factor variance
//! absorbing the testlet effect. The conversions below move between the two
//! metrics with the probit-to-logistic constant 1.702 applied exactly.
//!
//! Sign convention: P(correct) = Phi(lambda * eta - tau), so difficulty is
//! `b = tau / lambda`. This is the convention the real-data tables satisfy.

use serde::{Deserialize, Serialize};

use crate::design::TestletDesign;
use crate::error::{Error, Result};

/// Probit-to-logistic metric constant, applied exactly.
pub const LOGISTIC_SCALING: f64 = 1.702;

/// Loadings smaller than this leave b = tau/lambda undefined.
pub const DEGENERATE_LOADING_TOL: f64 = 1e-8;

/// Per-item discrimination and difficulty in the logistic IRT metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemIrtParams {
    /// Discrimination, positive for well-behaved items.
    pub a: f64,
    /// Difficulty in latent-trait units.
    pub b: f64,
}

impl ItemIrtParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }
}

/// Per-testlet variances of the person-specific testlet effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestletVariances(pub Vec<f64>);

impl TestletVariances {
    pub fn new(sigma2: Vec<f64>) -> Result<Self> {
        if sigma2.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidConfig(
                "testlet variances must be finite and nonnegative".into(),
            ));
        }
        Ok(Self(sigma2))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Item parameters in the standardized factor-analytic metric: loading on
/// the general factor, threshold, and the testlet variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma2: TestletVariances,
}

impl FactorParams {
    pub fn new(lambda: Vec<f64>, tau: Vec<f64>, sigma2: TestletVariances) -> Result<Self> {
        if lambda.len() != tau.len() {
            return Err(Error::DimensionMismatch(
                "lambda and tau lengths differ".into(),
            ));
        }
        Ok(Self { lambda, tau, sigma2 })
    }

    pub fn n_items(&self) -> usize {
        self.lambda.len()
    }

    /// Item communality lambda^2 (1 + sigma2_d) under the constrained
    /// structure (shared general/testlet loading).
    pub fn communality(&self, design: &TestletDesign, item: usize) -> f64 {
        let s2 = design
            .testlet_of(item)
            .map_or(0.0, |d| self.sigma2.as_slice()[d]);
        self.lambda[item] * self.lambda[item] * (1.0 + s2)
    }

    /// Err with the first Heywood item if any communality reaches 1.
    pub fn check_communalities(&self, design: &TestletDesign) -> Result<()> {
        for j in 0..self.n_items() {
            let c = self.communality(design, j);
            if c >= 1.0 {
                return Err(Error::Heywood {
                    item: j,
                    communality: c,
                });
            }
        }
        Ok(())
    }
}

/// Latent abilities: general trait per person plus a persons x testlets
/// matrix of testlet effects.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonAbilities {
    pub theta: Vec<f64>,
    gamma: Vec<f64>,
    n_testlets: usize,
}

impl PersonAbilities {
    pub fn new(theta: Vec<f64>, gamma: Vec<f64>, n_testlets: usize) -> Result<Self> {
        if n_testlets > 0 && gamma.len() != theta.len() * n_testlets {
            return Err(Error::DimensionMismatch("gamma matrix shape".into()));
        }
        Ok(Self {
            theta,
            gamma,
            n_testlets,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.theta.len()
    }

    pub fn n_testlets(&self) -> usize {
        self.n_testlets
    }

    #[inline]
    pub fn gamma(&self, person: usize, testlet: usize) -> f64 {
        self.gamma[person * self.n_testlets + testlet]
    }

    pub fn gamma_column(&self, testlet: usize) -> Vec<f64> {
        (0..self.n_persons()).map(|i| self.gamma(i, testlet)).collect()
    }
}

/// Success probability of the 2PL testlet model (logistic metric).
///
/// `gamma_d` is the person's effect on the item's testlet; pass 0 for an
/// independent item. Strictly increasing in theta, strictly decreasing in b
/// and gamma_d.
#[inline]
pub fn prob_correct(item: &ItemIrtParams, theta: f64, gamma_d: f64) -> f64 {
    let z = item.a * (theta - item.b - gamma_d);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Convert one item from the standardized factor metric to the logistic IRT
/// metric:
///
/// a = 1.702 lambda / sqrt(1 - lambda^2 (1 + sigma2_d)),  b = tau / lambda.
pub fn factor_to_irt(
    fp: &FactorParams,
    design: &TestletDesign,
    item: usize,
) -> Result<ItemIrtParams> {
    let lambda = fp.lambda[item];
    let communality = fp.communality(design, item);
    if communality >= 1.0 {
        return Err(Error::Heywood {
            item,
            communality,
        });
    }
    if lambda.abs() < DEGENERATE_LOADING_TOL {
        return Err(Error::DegenerateLoading { item });
    }
    let residual = (1.0 - communality).sqrt();
    Ok(ItemIrtParams {
        a: LOGISTIC_SCALING * lambda / residual,
        b: fp.tau[item] / lambda,
    })
}

/// Inverse of [`factor_to_irt`] for one item: IRT (a, b) plus the item's
/// testlet variance back to the standardized (lambda, tau).
pub fn irt_to_factor(ip: &ItemIrtParams, sigma2_d: f64) -> Result<(f64, f64)> {
    if ip.a <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "discrimination must be positive, got {}",
            ip.a
        )));
    }
    if sigma2_d < 0.0 {
        return Err(Error::InvalidConfig("negative testlet variance".into()));
    }
    let s = ip.a / LOGISTIC_SCALING;
    let lambda = (s * s / (1.0 + s * s * (1.0 + sigma2_d))).sqrt();
    Ok((lambda, ip.b * lambda))
}

/// Rescale conditional (theta-parameterized, unit-residual) estimates onto
/// the standardized metric via the explained-variance share
/// R^2 = v / (1 + v), v = lambda_raw^2 (1 + sigma2_d):
/// multiply both loading and threshold by sqrt(1 - R^2).
pub fn rescale_unstandardized(lambda_raw: f64, tau_raw: f64, sigma2_d: f64) -> (f64, f64) {
    let v = lambda_raw * lambda_raw * (1.0 + sigma2_d);
    let shrink = (1.0 / (1.0 + v)).sqrt();
    (lambda_raw * shrink, tau_raw * shrink)
}

/// Model-implied tetrachoric correlation matrix under the constrained
/// bi-factor structure:
/// rho_jk = lambda_j lambda_k (1 + sigma2_d [j,k share testlet d]),
/// with unit diagonal.
pub fn implied_tetrachorics(fp: &FactorParams, design: &TestletDesign) -> Vec<Vec<f64>> {
    let n = fp.n_items();
    let mut rho = vec![vec![0.0; n]; n];
    for j in 0..n {
        rho[j][j] = 1.0;
        for k in 0..j {
            let shared = match (design.testlet_of(j), design.testlet_of(k)) {
                (Some(dj), Some(dk)) if dj == dk => fp.sigma2.as_slice()[dj],
                _ => 0.0,
            };
            let r = fp.lambda[j] * fp.lambda[k] * (1.0 + shared);
            rho[j][k] = r;
            rho[k][j] = r;
        }
    }
    rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_testlet_design(n: usize) -> TestletDesign {
        TestletDesign::new(n, &[(0..n).collect::<Vec<_>>()]).unwrap()
    }

    #[test]
    fn prob_correct_fixture_values() {
        // symmetry of the logistic at its center
        let p = prob_correct(&ItemIrtParams::new(1.0, 0.0), 0.0, 0.0);
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-15);
        // direct scalar evaluation, generating-table item 1
        let p = prob_correct(&ItemIrtParams::new(1.17, -1.55), 0.0, 0.0);
        assert_abs_diff_eq!(p, 0.8598, epsilon = 5e-5);
        // the testlet effect is subtracted
        let p = prob_correct(&ItemIrtParams::new(1.0, 0.0), 0.0, 2.0);
        assert_abs_diff_eq!(p, 0.1192, epsilon = 5e-5);
    }

    #[test]
    fn prob_correct_monotonicity() {
        let item = ItemIrtParams::new(0.9, 0.3);
        let mut last = 0.0;
        for i in 0..200 {
            let theta = -6.0 + 12.0 * (i as f64) / 199.0;
            let p = prob_correct(&item, theta, 0.0);
            assert!(p > last && p < 1.0);
            last = p;
        }
        // decreasing in gamma and in b; exact half at theta = b, gamma = 0
        assert!(prob_correct(&item, 1.0, 0.5) < prob_correct(&item, 1.0, 0.0));
        assert!(
            prob_correct(&ItemIrtParams::new(0.9, 1.0), 1.0, 0.0)
                < prob_correct(&ItemIrtParams::new(0.9, 0.3), 1.0, 0.0)
        );
        assert_abs_diff_eq!(prob_correct(&item, 0.3, 0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn prob_correct_saturates() {
        let item = ItemIrtParams::new(2.0, 0.0);
        assert!(prob_correct(&item, 500.0, 0.0) <= 1.0);
        assert!(prob_correct(&item, -500.0, 0.0) >= 0.0);
        assert!(prob_correct(&item, 500.0, 0.0) > 0.999999);
    }

    #[test]
    fn factor_to_irt_real_data_items() {
        // passage 1, variance 0.089
        let design = one_testlet_design(2);
        let fp = FactorParams::new(
            vec![0.73, 0.76],
            vec![-0.53, -1.31],
            TestletVariances::new(vec![0.089]).unwrap(),
        )
        .unwrap();
        let it = factor_to_irt(&fp, &design, 0).unwrap();
        assert_abs_diff_eq!(it.a, 1.92, epsilon = 0.005);
        assert_abs_diff_eq!(it.b, -0.73, epsilon = 0.005);
        let it = factor_to_irt(&fp, &design, 1).unwrap();
        assert_abs_diff_eq!(it.a, 2.12, epsilon = 0.005);
        assert_abs_diff_eq!(it.b, -1.72, epsilon = 0.005);

        // passage 2, variance 0.166; item with very small loading
        let fp = FactorParams::new(
            vec![0.21, 0.5],
            vec![0.28, 0.0],
            TestletVariances::new(vec![0.166]).unwrap(),
        )
        .unwrap();
        let it = factor_to_irt(&fp, &design, 0).unwrap();
        assert_abs_diff_eq!(it.a, 0.37, epsilon = 0.005);
        assert_abs_diff_eq!(it.b, 1.33, epsilon = 0.005);
        // zero threshold maps to zero difficulty
        let it = factor_to_irt(&fp, &design, 1).unwrap();
        assert_abs_diff_eq!(it.b, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn factor_to_irt_error_paths() {
        let design = one_testlet_design(2);
        let fp = FactorParams::new(
            vec![0.99, 0.5],
            vec![0.0, 0.0],
            TestletVariances::new(vec![0.5]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            factor_to_irt(&fp, &design, 0),
            Err(Error::Heywood { item: 0, .. })
        ));
        let fp = FactorParams::new(
            vec![1e-12, 0.5],
            vec![0.3, 0.0],
            TestletVariances::new(vec![0.0]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            factor_to_irt(&fp, &design, 0),
            Err(Error::DegenerateLoading { item: 0 })
        ));
    }

    #[test]
    fn irt_to_factor_inverse_of_table_item() {
        let (lambda, tau) = irt_to_factor(&ItemIrtParams::new(1.92, -0.73), 0.089).unwrap();
        assert_abs_diff_eq!(lambda, 0.73, epsilon = 0.005);
        assert_abs_diff_eq!(tau, -0.53, epsilon = 0.005);
    }

    #[test]
    fn irt_to_factor_vanishing_discrimination() {
        let (lambda, tau) = irt_to_factor(&ItemIrtParams::new(1e-9, 1.5), 0.3).unwrap();
        assert!(lambda < 1e-9 && lambda > 0.0);
        assert!(tau.abs() < 1e-8);
    }

    #[test]
    fn conversion_round_trip_table1() {
        // compose irt_to_factor then factor_to_irt over the generating table
        // with sigma2 = 1; identity within 1e-10
        let items = crate::datagen::table1_fixture();
        let design = TestletDesign::blocks(6, 5);
        let sigma2 = TestletVariances::constant(6, 1.0).unwrap();
        let mut lambda = Vec::new();
        let mut tau = Vec::new();
        for (j, it) in items.iter().enumerate() {
            let d = design.testlet_of(j).unwrap();
            let (l, t) = irt_to_factor(it, sigma2.as_slice()[d]).unwrap();
            lambda.push(l);
            tau.push(t);
        }
        let fp = FactorParams::new(lambda, tau, sigma2).unwrap();
        for (j, it) in items.iter().enumerate() {
            let back = factor_to_irt(&fp, &design, j).unwrap();
            assert_abs_diff_eq!(back.a, it.a, epsilon = 1e-10);
            assert_abs_diff_eq!(back.b, it.b, epsilon = 1e-10);
        }
    }

    #[test]
    fn rescale_matches_real_data_columns() {
        // MLR raw estimates of item 1 with the MLR passage-1 variance land on
        // the standardized (WLSMV-metric) values
        let (l, t) = rescale_unstandardized(1.14, -0.83, 0.095);
        assert_abs_diff_eq!(l, 0.73, epsilon = 0.005);
        assert_abs_diff_eq!(t, -0.53, epsilon = 0.005);
        // zero loading: R^2 = 0 leaves the threshold alone
        let (l, t) = rescale_unstandardized(0.0, -0.83, 0.3);
        assert_eq!(l, 0.0);
        assert_abs_diff_eq!(t, -0.83, epsilon = 1e-15);
        // item 2: magnitudes approximately (0.76, 1.31)
        let (l, t) = rescale_unstandardized(1.29, -2.21, 0.095);
        assert_abs_diff_eq!(l, 0.76, epsilon = 0.01);
        assert_abs_diff_eq!(t.abs(), 1.31, epsilon = 0.01);
    }

    #[test]
    fn rescale_is_consistent_with_conversions() {
        // standardize then convert equals converting the conditional slope
        // directly: a = 1.702 * lambda_raw
        let (l, t) = rescale_unstandardized(0.8, 0.4, 0.5);
        let design = one_testlet_design(2);
        let fp = FactorParams::new(
            vec![l, 0.1],
            vec![t, 0.0],
            TestletVariances::new(vec![0.5]).unwrap(),
        )
        .unwrap();
        let it = factor_to_irt(&fp, &design, 0).unwrap();
        assert_abs_diff_eq!(it.a, LOGISTIC_SCALING * 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(it.b, 0.4 / 0.8, epsilon = 1e-12);
    }

    #[test]
    fn implied_tetrachorics_structure() {
        let design = TestletDesign::new(4, &[vec![0, 1]]).unwrap();
        let fp = FactorParams::new(
            vec![0.5, 0.5, 0.5, 0.5],
            vec![0.0; 4],
            TestletVariances::new(vec![1.0]).unwrap(),
        )
        .unwrap();
        let rho = implied_tetrachorics(&fp, &design);
        assert_abs_diff_eq!(rho[2][3], 0.25, epsilon = 1e-15); // different testlets
        assert_abs_diff_eq!(rho[0][1], 0.5, epsilon = 1e-15); // shared testlet
        assert_abs_diff_eq!(rho[0][0], 1.0, epsilon = 1e-15);

        // sigma2 = 0 collapses to the unidimensional rank-1 structure
        let fp0 = FactorParams::new(
            vec![0.6, 0.4, 0.3, 0.2],
            vec![0.0; 4],
            TestletVariances::new(vec![0.0]).unwrap(),
        )
        .unwrap();
        let rho0 = implied_tetrachorics(&fp0, &design);
        for j in 0..4 {
            for k in 0..4 {
                if j != k {
                    assert_abs_diff_eq!(
                        rho0[j][k],
                        fp0.lambda[j] * fp0.lambda[k],
                        epsilon = 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn implied_tetrachorics_monte_carlo_check() {
        // same-testlet correlation of latent responses ~ 0.5 for
        // lambda = 0.5, sigma2 = 1
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let std_n = Normal::new(0.0, 1.0).unwrap();
        let n = 400_000;
        let lambda = 0.5f64;
        let resid = (1.0 - lambda * lambda * 2.0).sqrt();
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let eta: f64 = std_n.sample(&mut rng);
            let zeta: f64 = std_n.sample(&mut rng);
            let x = lambda * eta + lambda * zeta + resid * std_n.sample(&mut rng);
            let y = lambda * eta + lambda * zeta + resid * std_n.sample(&mut rng);
            sxy += x * y;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let corr = cov / (vx * vy).sqrt();
        assert_abs_diff_eq!(corr, 0.5, epsilon = 0.01);
    }

    #[test]
    fn implied_matrix_positive_semidefinite() {
        // valid communalities make the implied matrix PSD: try a Cholesky
        // with a tiny jitter
        let design = TestletDesign::blocks(3, 3);
        let lambda: Vec<f64> = (0..9).map(|j| 0.2 + 0.07 * j as f64).collect();
        let fp = FactorParams::new(
            lambda,
            vec![0.0; 9],
            TestletVariances::new(vec![0.3, 0.6, 0.15]).unwrap(),
        )
        .unwrap();
        fp.check_communalities(&design).unwrap();
        let rho = implied_tetrachorics(&fp, &design);
        let n = 9;
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                m[(j, k)] = rho[j][k] + if j == k { 1e-10 } else { 0.0 };
            }
        }
        assert!(nalgebra::linalg::Cholesky::new(m).is_some());
    }
}
