//! Two-player TrueSkill ratings (no draws).

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::ItemId;
use crate::error::{Error, Result};

pub const DEFAULT_MU: f64 = 25.0;
pub const DEFAULT_SIGMA: f64 = DEFAULT_MU / 3.0;
pub const DEFAULT_BETA: f64 = DEFAULT_SIGMA / 2.0;
pub const DEFAULT_TAU: f64 = DEFAULT_SIGMA / 100.0;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Additive mean correction `φ(t)/Φ(t)` for a win at normalized margin `t`.
fn v_win(t: f64) -> f64 {
    if t < -30.0 {
        // Mills-ratio asymptotics where φ and Φ underflow together.
        let t2 = t * t;
        return -t / (1.0 - 1.0 / t2 + 3.0 / (t2 * t2));
    }
    normal_pdf(t) / normal_cdf(t)
}

/// Multiplicative variance correction `v(t)(v(t) + t)`.
fn w_win(t: f64) -> f64 {
    let v = v_win(t);
    (v * (v + t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueSkillState {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub beta2: f64,
    pub tau2: f64,
}

impl TrueSkillState {
    /// Every item at `mu = 25`, `sigma = 25/3`, with `beta = sigma/2` and `tau = sigma/100`.
    pub fn new(n_items: usize) -> Self {
        Self::with_params(n_items, DEFAULT_MU, DEFAULT_SIGMA, DEFAULT_BETA, DEFAULT_TAU)
    }

    pub fn with_params(n_items: usize, mu: f64, sigma: f64, beta: f64, tau: f64) -> Self {
        TrueSkillState {
            mu: vec![mu; n_items],
            sigma2: vec![sigma * sigma; n_items],
            beta2: beta * beta,
            tau2: tau * tau,
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn extend_items(&mut self, n_items: usize) {
        let (mu0, s0) = (DEFAULT_MU, DEFAULT_SIGMA * DEFAULT_SIGMA);
        self.mu.resize(n_items, mu0);
        self.sigma2.resize(n_items, s0);
    }

    fn check(&self, i: ItemId, j: ItemId) -> Result<()> {
        if i == j || i >= self.len() || j >= self.len() {
            return Err(Error::InvalidPair(i, j));
        }
        Ok(())
    }

    /// Moment-matched update after comparing `i` and `j`; `c = true` means `i` won.
    pub fn update(&mut self, i: ItemId, j: ItemId, c: bool) -> Result<()> {
        self.check(i, j)?;
        let (winner, loser) = if c { (i, j) } else { (j, i) };
        let sw2 = self.sigma2[winner] + self.tau2;
        let sl2 = self.sigma2[loser] + self.tau2;
        let c2 = 2.0 * self.beta2 + sw2 + sl2;
        let cn = c2.sqrt();
        let t = (self.mu[winner] - self.mu[loser]) / cn;
        let (v, w) = (v_win(t), w_win(t));
        self.mu[winner] += sw2 / cn * v;
        self.mu[loser] -= sl2 / cn * v;
        // Floor keeps variances strictly positive even when w rounds to 1.
        self.sigma2[winner] = (sw2 * (1.0 - sw2 / c2 * w)).max(f64::MIN_POSITIVE);
        self.sigma2[loser] = (sl2 * (1.0 - sl2 / c2 * w)).max(f64::MIN_POSITIVE);
        Ok(())
    }

    /// Probability that `i` beats `j` under the current ratings.
    pub fn win_probability(&self, i: ItemId, j: ItemId) -> f64 {
        let c = (2.0 * self.beta2 + (self.sigma2[i] + self.sigma2[j])).sqrt();
        let x = (self.mu[i] - self.mu[j]) / c;
        if x >= 0.0 {
            normal_cdf(x)
        } else {
            1.0 - normal_cdf(-x)
        }
    }

    /// Draw-probability style match quality used to pick informative pairs.
    pub fn match_quality(&self, i: ItemId, j: ItemId) -> f64 {
        let c2 = 2.0 * self.beta2 + (self.sigma2[i] + self.sigma2[j]);
        let dmu = self.mu[i] - self.mu[j];
        (2.0 * self.beta2 / c2).sqrt() * (-dmu * dmu / (2.0 * c2)).exp()
    }
}

/// Functional form of [`TrueSkillState::update`].
pub fn trueskill_update(state: &TrueSkillState, i: ItemId, j: ItemId, c: bool) -> Result<TrueSkillState> {
    let mut next = state.clone();
    next.update(i, j, c)?;
    Ok(next)
}
