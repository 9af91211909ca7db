//! Gaussian quadrature rules via the Golub-Welsch eigenvalue method.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

/// A quadrature rule: paired nodes and weights.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Nodes and weights from the symmetric tridiagonal Jacobi matrix of a
/// family of orthonormal polynomials. `off_diag[k]` couples degrees k and
/// k+1; `mu0` is the total mass of the weight function.
fn golub_welsch(off_diag: &[f64], mu0: f64) -> QuadRule {
    let n = off_diag.len() + 1;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off_diag.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Hermite rule normalized for the standard normal density:
/// sum_i w_i f(x_i) approximates E[f(Z)], Z ~ N(0,1). Weights sum to 1.
pub fn gauss_hermite(n: usize) -> QuadRule {
    assert!(n >= 1, "need at least one node");
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut rule = golub_welsch(&off, 1.0);
    // enforce exact symmetry of the node set
    let m = rule.nodes.len();
    for i in 0..m / 2 {
        let node = 0.5 * (rule.nodes[m - 1 - i] - rule.nodes[i]);
        rule.nodes[i] = -node;
        rule.nodes[m - 1 - i] = node;
        let w = 0.5 * (rule.weights[i] + rule.weights[m - 1 - i]);
        rule.weights[i] = w;
        rule.weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        rule.nodes[m / 2] = 0.0;
    }
    let total: f64 = rule.weights.iter().sum();
    for w in &mut rule.weights {
        *w /= total;
    }
    rule
}

/// Gauss-Legendre rule on [-1, 1]; weights sum to 2.
pub fn gauss_legendre(n: usize) -> QuadRule {
    assert!(n >= 1, "need at least one node");
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&off, 2.0)
}

/// Cached Gauss-Legendre rules (the bivariate CDF calls these in tight loops).
pub fn gauss_legendre_cached(n: usize) -> Arc<QuadRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(gauss_legendre(n)))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_normal_moments() {
        for &n in &[5, 21, 41, 61] {
            let rule = gauss_hermite(n);
            let m = |p: i32| -> f64 {
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(p))
                    .sum()
            };
            assert_abs_diff_eq!(m(0), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(m(1), 0.0, epsilon = 1e-13);
            assert_abs_diff_eq!(m(2), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m(4), 3.0, epsilon = 1e-11);
            assert_abs_diff_eq!(m(6), 15.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn hermite_integrates_normal_cdf_product() {
        // E[Phi(Z)] = 1/2 by symmetry
        let rule = gauss_hermite(21);
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * crate::stats::normal::norm_cdf(*x))
            .sum();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn legendre_polynomial_exactness() {
        let rule = gauss_legendre(12);
        let total: f64 = rule.weights.iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
        // integral of x^10 over [-1,1] = 2/11
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powi(10))
            .sum();
        assert_abs_diff_eq!(v, 2.0 / 11.0, epsilon = 1e-13);
    }
}
