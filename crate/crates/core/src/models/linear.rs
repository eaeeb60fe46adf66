//! Fully contextual logistic model: ridge MLE and Bayesian MAP with a
//! Laplace posterior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::newton::{self, Design, Penalty};
use crate::data::{ComparisonHistory, ItemPool};
use crate::error::{Error, Result};
use crate::info_matrix::{invert_spd, InfoMatrix};
use crate::logistic::sigmoid_deriv;

/// Rows `z_s = x_{i_s} − x_{j_s}` with labels `c_s`.
pub(crate) struct ContextualDesign {
    rows: Vec<DVector<f64>>,
    labels: Vec<f64>,
    dim: usize,
}

impl ContextualDesign {
    pub(crate) fn new(history: &ComparisonHistory, pool: &ItemPool) -> Result<Self> {
        let mut rows = Vec::with_capacity(history.len());
        let mut labels = Vec::with_capacity(history.len());
        for rec in history.records() {
            rows.push(pool.diff_vector(rec.i, rec.j)?);
            labels.push(rec.label());
        }
        Ok(ContextualDesign {
            rows,
            labels,
            dim: pool.dim(),
        })
    }
}

impl Design for ContextualDesign {
    fn n_params(&self) -> usize {
        self.dim
    }

    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn label(&self, row: usize) -> f64 {
        self.labels[row]
    }

    fn margin(&self, row: usize, beta: &DVector<f64>) -> f64 {
        self.rows[row].dot(beta)
    }

    fn add_scaled(&self, row: usize, coef: f64, grad: &mut DVector<f64>) {
        grad.axpy(coef, &self.rows[row], 1.0);
    }

    fn add_outer(&self, row: usize, w: f64, hess: &mut DMatrix<f64>) {
        let z = &self.rows[row];
        let d = self.dim;
        for c in 0..d {
            for r in 0..d {
                hess[(r, c)] += w * (z[r] * z[c]);
            }
        }
    }
}

/// Ridge-regularized logistic model `σ(θᵀ(x_i − x_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub theta: DVector<f64>,
    pub reg: f64,
    /// False when the optimizer hit its iteration cap; `theta` is then the best iterate.
    pub converged: bool,
}

impl LinearModel {
    pub fn zeros(dim: usize, reg: f64) -> Self {
        LinearModel {
            theta: DVector::zeros(dim),
            reg,
            converged: true,
        }
    }

    /// Gradient of the penalized log-likelihood at `theta`.
    pub fn loglik_grad(&self, history: &ComparisonHistory, pool: &ItemPool) -> Result<DVector<f64>> {
        let design = ContextualDesign::new(history, pool)?;
        Ok(-newton::gradient(&design, &ridge_penalty(pool.dim(), self.reg), &self.theta))
    }

    /// Penalized log-likelihood at `theta`.
    pub fn loglik(&self, history: &ComparisonHistory, pool: &ItemPool) -> Result<f64> {
        let design = ContextualDesign::new(history, pool)?;
        Ok(-newton::objective(&design, &ridge_penalty(pool.dim(), self.reg), &self.theta))
    }
}

fn ridge_penalty(dim: usize, reg: f64) -> Penalty {
    Penalty::Diagonal {
        mean: DVector::zeros(dim),
        precision: DVector::from_element(dim, reg),
    }
}

/// Ridge MLE: maximizes `Σ log-lik − reg·‖θ‖²/2`.
pub fn fit_mle(history: &ComparisonHistory, pool: &ItemPool, reg: f64) -> Result<LinearModel> {
    fit_mle_from(history, pool, reg, None)
}

/// [`fit_mle`] started from `warm` instead of zero.
pub fn fit_mle_from(
    history: &ComparisonHistory,
    pool: &ItemPool,
    reg: f64,
    warm: Option<&DVector<f64>>,
) -> Result<LinearModel> {
    if !(reg > 0.0) {
        return Err(Error::Validation(format!("regularization must be positive, got {reg}")));
    }
    check_finite(pool)?;
    let design = ContextualDesign::new(history, pool)?;
    let start = warm.cloned().unwrap_or_else(|| DVector::zeros(pool.dim()));
    let sol = newton::minimize(&design, &ridge_penalty(pool.dim(), reg), start);
    if !sol.converged {
        log::warn!("ridge MLE did not converge after {} iterations", sol.iterations);
    }
    Ok(LinearModel {
        theta: sol.beta,
        reg,
        converged: sol.converged,
    })
}

pub(crate) fn check_finite(pool: &ItemPool) -> Result<()> {
    if pool.features().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation("non-finite feature value".into()))
    }
}

/// MAP estimate with Gaussian prior and Laplace posterior `N(θ_MAP, H_B⁻¹)`.
#[derive(Debug, Clone)]
pub struct BayesLinearModel {
    pub theta_map: DVector<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_precision: DMatrix<f64>,
    /// `H_B = prior_precision + Σ σ̇(θ_MAPᵀz) zzᵀ` and its inverse.
    pub posterior: InfoMatrix,
    pub converged: bool,
}

impl BayesLinearModel {
    /// Prior-only model: `θ_MAP = prior_mean`, posterior = prior.
    pub fn from_prior(prior_mean: DVector<f64>, prior_precision: DMatrix<f64>) -> Result<Self> {
        let posterior = InfoMatrix::from_precision(prior_precision.clone())?;
        Ok(BayesLinearModel {
            theta_map: prior_mean.clone(),
            prior_mean,
            prior_precision,
            posterior,
            converged: true,
        })
    }

    pub fn as_linear(&self) -> LinearModel {
        LinearModel {
            theta: self.theta_map.clone(),
            reg: 1.0,
            converged: self.converged,
        }
    }

    /// Gradient of the log posterior at `theta_map`.
    pub fn log_posterior_grad(&self, history: &ComparisonHistory, pool: &ItemPool) -> Result<DVector<f64>> {
        let design = ContextualDesign::new(history, pool)?;
        let penalty = Penalty::Dense {
            mean: self.prior_mean.clone(),
            precision: self.prior_precision.clone(),
        };
        Ok(-newton::gradient(&design, &penalty, &self.theta_map))
    }
}

/// Maximizes the log posterior under a `N(prior_mean, prior_precision⁻¹)` prior.
pub fn fit_map(
    history: &ComparisonHistory,
    pool: &ItemPool,
    prior_mean: &DVector<f64>,
    prior_precision: &DMatrix<f64>,
) -> Result<BayesLinearModel> {
    fit_map_from(history, pool, prior_mean, prior_precision, None)
}

pub fn fit_map_from(
    history: &ComparisonHistory,
    pool: &ItemPool,
    prior_mean: &DVector<f64>,
    prior_precision: &DMatrix<f64>,
    warm: Option<&DVector<f64>>,
) -> Result<BayesLinearModel> {
    let d = pool.dim();
    if prior_mean.len() != d || prior_precision.shape() != (d, d) {
        return Err(Error::Validation(format!("prior does not match feature dimension {d}")));
    }
    // Rejects non-positive-definite priors.
    invert_spd(prior_precision)?;
    check_finite(pool)?;
    let design = ContextualDesign::new(history, pool)?;
    let penalty = Penalty::Dense {
        mean: prior_mean.clone(),
        precision: prior_precision.clone(),
    };
    let start = warm.cloned().unwrap_or_else(|| prior_mean.clone());
    let sol = newton::minimize(&design, &penalty, start);
    if !sol.converged {
        log::warn!("MAP fit did not converge after {} iterations", sol.iterations);
    }
    let mut h = prior_precision.clone();
    for s in 0..design.n_rows() {
        let w = sigmoid_deriv(design.margin(s, &sol.beta));
        design.add_outer(s, w, &mut h);
    }
    let posterior = InfoMatrix::from_precision(h)?;
    Ok(BayesLinearModel {
        theta_map: sol.beta,
        prior_mean: prior_mean.clone(),
        prior_precision: prior_precision.clone(),
        posterior,
        converged: sol.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logistic::sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, n: usize, d: usize, t: usize) -> (ItemPool, ComparisonHistory) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pool = ItemPool::from_rows(&rows, None).unwrap();
        let mut h = ComparisonHistory::new();
        for _ in 0..t {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            h.push(i, j, rng.random_bool(0.6)).unwrap();
        }
        (pool, h)
    }

    #[test]
    fn empty_history_gives_zero() {
        let (pool, _) = random_instance(0, 4, 3, 0);
        let m = fit_mle(&ComparisonHistory::new(), &pool, 1.0).unwrap();
        assert_eq!(m.theta, DVector::zeros(3));
    }

    #[test]
    fn balanced_labels_give_zero() {
        let pool = ItemPool::from_rows(&[vec![1.0, 0.5], vec![0.0, 0.0]], None).unwrap();
        let h = ComparisonHistory::from_triples([(0, 1, true), (0, 1, false)]).unwrap();
        let m = fit_mle(&h, &pool, 1.0).unwrap();
        assert!(m.theta.amax() < 1e-12);
    }

    #[test]
    fn one_dimensional_matches_bisection() {
        // 10 wins on z = 1 with reg = 1: stationary point of 10 ln σ(θ) − θ²/2
        // solves 10(1 − σ(θ)) = θ.
        let pool = ItemPool::from_rows(&[vec![1.0], vec![0.0]], None).unwrap();
        let h = ComparisonHistory::from_triples((0..10).map(|_| (0, 1, true))).unwrap();
        let m = fit_mle(&h, &pool, 1.0).unwrap();
        let f = |x: f64| 10.0 * (1.0 - sigmoid(x)) - x;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((m.theta[0] - 0.5 * (lo + hi)).abs() < 1e-8, "{} vs {lo}", m.theta[0]);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let (pool, h) = random_instance(1, 8, 4, 60);
        let m = fit_mle(&h, &pool, 1.0).unwrap();
        assert!(m.converged);
        assert!(m.loglik_grad(&h, &pool).unwrap().amax() < 1e-6);
    }

    #[test]
    fn penalty_only_gradient() {
        let (pool, _) = random_instance(2, 5, 3, 0);
        let m = LinearModel {
            theta: DVector::from_vec(vec![0.3, -1.2, 2.0]),
            reg: 1.0,
            converged: true,
        };
        let g = m.loglik_grad(&ComparisonHistory::new(), &pool).unwrap();
        assert_eq!(g, -&m.theta);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (pool, h) = random_instance(3, 10, 5, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let model = LinearModel {
            theta: theta.clone(),
            reg: 1.0,
            converged: true,
        };
        let g = model.loglik_grad(&h, &pool).unwrap();
        let step = 1e-5;
        for k in 0..5 {
            let mut plus = model.clone();
            plus.theta[k] += step;
            let mut minus = model.clone();
            minus.theta[k] -= step;
            let fd = (plus.loglik(&h, &pool).unwrap() - minus.loglik(&h, &pool).unwrap()) / (2.0 * step);
            assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-3), "{fd} vs {}", g[k]);
        }
    }

    #[test]
    fn map_prior_only() {
        let (pool, _) = random_instance(4, 4, 2, 0);
        let mean = DVector::from_vec(vec![0.5, -0.25]);
        let m = fit_map(&ComparisonHistory::new(), &pool, &mean, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(m.theta_map, mean);
        assert!((m.posterior.hinv() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn map_with_unit_prior_equals_ridge_mle() {
        let (pool, h) = random_instance(5, 12, 4, 80);
        let mle = fit_mle(&h, &pool, 1.0).unwrap();
        let map = fit_map(&h, &pool, &DVector::zeros(4), &DMatrix::identity(4, 4)).unwrap();
        assert!((mle.theta - map.theta_map).amax() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (pool, h) = random_instance(6, 4, 2, 3);
        assert!(fit_mle(&h, &pool, 0.0).is_err());
        let indefinite = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(fit_map(&h, &pool, &DVector::zeros(2), &indefinite).is_err());
    }
}
