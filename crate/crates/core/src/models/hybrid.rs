//! Hybrid model: contextual score plus a free per-item offset,
//! `f(i, j) = θᵀ(x_i − x_j) + ζ_i − ζ_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linear::check_finite;
use super::newton::{self, Design, Penalty};
use crate::data::{ComparisonHistory, ItemId, ItemPool};
use crate::error::{Error, Result};

struct HybridDesign {
    rows: Vec<(DVector<f64>, ItemId, ItemId)>,
    labels: Vec<f64>,
    dim: usize,
    n_items: usize,
}

impl HybridDesign {
    fn new(history: &ComparisonHistory, pool: &ItemPool) -> Result<Self> {
        let mut rows = Vec::with_capacity(history.len());
        let mut labels = Vec::with_capacity(history.len());
        for rec in history.records() {
            rows.push((pool.diff_vector(rec.i, rec.j)?, rec.i, rec.j));
            labels.push(rec.label());
        }
        Ok(HybridDesign {
            rows,
            labels,
            dim: pool.dim(),
            n_items: pool.len(),
        })
    }
}

impl Design for HybridDesign {
    fn n_params(&self) -> usize {
        self.dim + self.n_items
    }

    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn label(&self, row: usize) -> f64 {
        self.labels[row]
    }

    fn margin(&self, row: usize, beta: &DVector<f64>) -> f64 {
        let (z, i, j) = &self.rows[row];
        let d = self.dim;
        z.dot(&beta.rows(0, d)) + beta[d + i] - beta[d + j]
    }

    fn add_scaled(&self, row: usize, coef: f64, grad: &mut DVector<f64>) {
        let (z, i, j) = &self.rows[row];
        let d = self.dim;
        for k in 0..d {
            grad[k] += coef * z[k];
        }
        grad[d + i] += coef;
        grad[d + j] -= coef;
    }

    fn add_outer(&self, row: usize, w: f64, hess: &mut DMatrix<f64>) {
        let (z, i, j) = &self.rows[row];
        let d = self.dim;
        let (a, b) = (d + i, d + j);
        for c in 0..d {
            for r in 0..d {
                hess[(r, c)] += w * (z[r] * z[c]);
            }
            let v = w * z[c];
            hess[(a, c)] += v;
            hess[(c, a)] += v;
            hess[(b, c)] -= v;
            hess[(c, b)] -= v;
        }
        hess[(a, a)] += w;
        hess[(b, b)] += w;
        hess[(a, b)] -= w;
        hess[(b, a)] -= w;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub theta: DVector<f64>,
    pub zeta: DVector<f64>,
    pub reg_theta: f64,
    pub reg_zeta: f64,
    pub converged: bool,
}

impl HybridModel {
    pub fn zeros(dim: usize, n_items: usize, reg_theta: f64, reg_zeta: f64) -> Self {
        HybridModel {
            theta: DVector::zeros(dim),
            zeta: DVector::zeros(n_items),
            reg_theta,
            reg_zeta,
            converged: true,
        }
    }

    /// Grows `zeta` to `n_items`, new offsets starting at zero.
    pub fn extend_items(&mut self, n_items: usize) {
        if n_items > self.zeta.len() {
            let old = self.zeta.len();
            self.zeta = self.zeta.clone().resize_vertically(n_items, 0.0);
            debug_assert!(self.zeta.rows(old, n_items - old).iter().all(|v| *v == 0.0));
        }
    }

    fn params(&self) -> DVector<f64> {
        let d = self.theta.len();
        let mut beta = DVector::zeros(d + self.zeta.len());
        beta.rows_mut(0, d).copy_from(&self.theta);
        beta.rows_mut(d, self.zeta.len()).copy_from(&self.zeta);
        beta
    }

    fn penalty(&self) -> Penalty {
        hybrid_penalty(self.theta.len(), self.zeta.len(), self.reg_theta, self.reg_zeta)
    }

    /// Gradient of the penalized log-likelihood, stacked as `(θ, ζ)`.
    pub fn loglik_grad(&self, history: &ComparisonHistory, pool: &ItemPool) -> Result<DVector<f64>> {
        let design = HybridDesign::new(history, pool)?;
        Ok(-newton::gradient(&design, &self.penalty(), &self.params()))
    }

    pub fn loglik(&self, history: &ComparisonHistory, pool: &ItemPool) -> Result<f64> {
        let design = HybridDesign::new(history, pool)?;
        Ok(-newton::objective(&design, &self.penalty(), &self.params()))
    }
}

fn hybrid_penalty(d: usize, n: usize, reg_theta: f64, reg_zeta: f64) -> Penalty {
    let mut precision = DVector::from_element(d + n, reg_zeta);
    precision.rows_mut(0, d).fill(reg_theta);
    Penalty::Diagonal {
        mean: DVector::zeros(d + n),
        precision,
    }
}

/// Joint penalized fit of `(θ, ζ)`.
pub fn fit_hybrid(
    history: &ComparisonHistory,
    pool: &ItemPool,
    reg_theta: f64,
    reg_zeta: f64,
) -> Result<HybridModel> {
    fit_hybrid_from(history, pool, reg_theta, reg_zeta, None)
}

pub fn fit_hybrid_from(
    history: &ComparisonHistory,
    pool: &ItemPool,
    reg_theta: f64,
    reg_zeta: f64,
    warm: Option<&HybridModel>,
) -> Result<HybridModel> {
    if !(reg_theta > 0.0 && reg_zeta > 0.0) {
        return Err(Error::Validation(format!(
            "regularization must be positive, got ({reg_theta}, {reg_zeta})"
        )));
    }
    check_finite(pool)?;
    let (d, n) = (pool.dim(), pool.len());
    let design = HybridDesign::new(history, pool)?;
    let mut start = HybridModel::zeros(d, n, reg_theta, reg_zeta);
    if let Some(w) = warm {
        if w.theta.len() == d && w.zeta.len() <= n {
            start.theta.copy_from(&w.theta);
            start.zeta.rows_mut(0, w.zeta.len()).copy_from(&w.zeta);
        }
    }
    let sol = newton::minimize(&design, &hybrid_penalty(d, n, reg_theta, reg_zeta), start.params());
    if !sol.converged {
        log::warn!("hybrid fit did not converge after {} iterations", sol.iterations);
    }
    Ok(HybridModel {
        theta: sol.beta.rows(0, d).into_owned(),
        zeta: sol.beta.rows(d, n).into_owned(),
        reg_theta,
        reg_zeta,
        converged: sol.converged,
    })
}
