//! Preference models and the rankings they induce.

mod hybrid;
mod linear;
mod newton;
mod trueskill;

pub use hybrid::{fit_hybrid, fit_hybrid_from, HybridModel};
pub use linear::{fit_map, fit_map_from, fit_mle, fit_mle_from, BayesLinearModel, LinearModel};
pub use newton::{GRAD_TOLERANCE, MAX_ITERATIONS};
pub use trueskill::{
    trueskill_update, TrueSkillState, DEFAULT_BETA, DEFAULT_MU, DEFAULT_SIGMA, DEFAULT_TAU,
};

use crate::data::{ItemId, ItemPool};
use crate::error::Result;
use crate::logistic::sigmoid;

/// Anything that assigns a real score to every item.
pub trait Scorer {
    fn item_scores(&self, pool: &ItemPool) -> Vec<f64>;
}

/// Logistic comparison models with score difference `f(i, j)`.
pub trait LogisticPreference: Scorer {
    /// `f(i, j)`; satisfies `f(j, i) = −f(i, j)` exactly.
    fn score_diff(&self, pool: &ItemPool, i: ItemId, j: ItemId) -> Result<f64>;
}

impl Scorer for LinearModel {
    fn item_scores(&self, pool: &ItemPool) -> Vec<f64> {
        (pool.features() * &self.theta).iter().copied().collect()
    }
}

impl LogisticPreference for LinearModel {
    fn score_diff(&self, pool: &ItemPool, i: ItemId, j: ItemId) -> Result<f64> {
        Ok(self.theta.dot(&pool.diff_vector(i, j)?))
    }
}

impl Scorer for BayesLinearModel {
    fn item_scores(&self, pool: &ItemPool) -> Vec<f64> {
        (pool.features() * &self.theta_map).iter().copied().collect()
    }
}

impl LogisticPreference for BayesLinearModel {
    fn score_diff(&self, pool: &ItemPool, i: ItemId, j: ItemId) -> Result<f64> {
        Ok(self.theta_map.dot(&pool.diff_vector(i, j)?))
    }
}

impl Scorer for HybridModel {
    fn item_scores(&self, pool: &ItemPool) -> Vec<f64> {
        let base = pool.features() * &self.theta;
        base.iter()
            .enumerate()
            .map(|(i, s)| s + self.zeta.get(i).copied().unwrap_or(0.0))
            .collect()
    }
}

impl LogisticPreference for HybridModel {
    fn score_diff(&self, pool: &ItemPool, i: ItemId, j: ItemId) -> Result<f64> {
        let zeta = |k: ItemId| self.zeta.get(k).copied().unwrap_or(0.0);
        Ok(self.theta.dot(&pool.diff_vector(i, j)?) + (zeta(i) - zeta(j)))
    }
}

impl Scorer for TrueSkillState {
    fn item_scores(&self, _pool: &ItemPool) -> Vec<f64> {
        self.mu.clone()
    }
}

/// `σ(f(i, j))`, arranged so that `p(i, j) + p(j, i) = 1` holds exactly.
pub fn predict_prob<M: LogisticPreference + ?Sized>(model: &M, pool: &ItemPool, i: ItemId, j: ItemId) -> Result<f64> {
    Ok(prob_from_diff(model.score_diff(pool, i, j)?))
}

pub(crate) fn prob_from_diff(f: f64) -> f64 {
    if f >= 0.0 {
        sigmoid(f)
    } else {
        1.0 - sigmoid(-f)
    }
}

/// Items by decreasing score; equal scores keep ascending id order.
pub fn ranking_from_scores(scores: &[f64]) -> Vec<ItemId> {
    let mut order: Vec<ItemId> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn induced_ranking<M: Scorer + ?Sized>(model: &M, pool: &ItemPool) -> Vec<ItemId> {
    ranking_from_scores(&model.item_scores(pool))
}
