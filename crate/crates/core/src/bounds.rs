//! Concentration terms and the high-probability ordering-error bound.
//!
//! Norms are taken in the normalized information metric `H̃ = H/T`, so
//! `‖z‖²_{H̃⁻¹} = T·‖z‖²_{H⁻¹}`. With unnormalized inputs `T` cancels from the
//! exponents, which is why these terms shrink only as `H` grows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, ItemPool};
use crate::error::{Error, Result};
use crate::logistic::{sigmoid, sigmoid_deriv};
use crate::models::ranking_from_scores;

/// Floor applied to the data-derived minimum eigenvalue.
pub const LAMBDA0_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `‖θ_*‖ ≤ S`.
    pub s: f64,
    /// `‖x_i‖ ≤ Q` for every item.
    pub q: f64,
    /// Minimum-eigenvalue floor of the information matrix.
    pub lambda0: f64,
    pub dim: usize,
}

impl BoundConstants {
    pub fn new(s: f64, q: f64, lambda0: f64, dim: usize) -> Result<Self> {
        if !(s > 0.0 && q > 0.0 && lambda0 > 0.0) || dim == 0 {
            return Err(Error::Validation(format!(
                "bound constants need S, Q, lambda0 > 0 and d >= 1 (got {s}, {q}, {lambda0}, {dim})"
            )));
        }
        Ok(BoundConstants { s, q, lambda0, dim })
    }

    /// `S = ‖θ_*‖`, `Q = max_i ‖x_i‖`, `λ₀ = max(λ_min(H/T), floor)`.
    pub fn from_instance(theta_star: &DVector<f64>, pool: &ItemPool, h: &DMatrix<f64>, t: usize) -> Result<Self> {
        let q = pool.features().row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let min_eig = h.clone().symmetric_eigen().eigenvalues.min() / t.max(1) as f64;
        Self::new(theta_star.norm(), q, min_eig.max(LAMBDA0_FLOOR), pool.dim())
    }

    pub fn rho(&self) -> f64 {
        (3.0 + 2.0 * (1.0 + 4.0 * self.q * self.q / self.lambda0).ln()).sqrt()
    }

    pub fn c1(&self) -> f64 {
        let r = self.rho();
        r * r * (1.0 + 2.0 * self.s).powi(2)
    }
}

/// `(α, β)` from the slope `σ̇(zᵀθ)` and the normalized squared norm
/// `‖z‖²_{H̃⁻¹}`. A zero norm gives `(0, 0)` by the limit convention.
pub fn concentration_terms_normalized(
    slope: f64,
    norm_sq_tilde: f64,
    delta: f64,
    t: usize,
    consts: &BoundConstants,
) -> (f64, f64) {
    let (d, c1, t) = (consts.dim as f64, consts.c1(), t as f64);
    let alpha_den = 8.0 * d * c1 * slope * slope * norm_sq_tilde;
    let beta_den = d * c1 * norm_sq_tilde;
    let alpha = if alpha_den > 0.0 { (-delta * delta * t / alpha_den).exp() } else { 0.0 };
    let beta = if beta_den > 0.0 { (-delta * t / beta_den).exp() } else { 0.0 };
    (alpha, beta)
}

/// `(α, β)` for one pair, given `θ_T` and the unnormalized inverse `H⁻¹`.
pub fn concentration_terms(
    z: &DVector<f64>,
    theta: &DVector<f64>,
    hinv: &DMatrix<f64>,
    delta: f64,
    t: usize,
    consts: &BoundConstants,
) -> Result<(f64, f64)> {
    if !(delta > 0.0) || t == 0 {
        return Err(Error::Validation(format!("need delta > 0 and T >= 1 (got {delta}, {t})")));
    }
    let norm_sq = z.dot(&(hinv * z)).max(0.0);
    Ok(concentration_terms_normalized(
        sigmoid_deriv(theta.dot(z)),
        t as f64 * norm_sq,
        delta,
        t,
        consts,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub delta_star: f64,
    /// `Δ_ij` for `i < j`, when derived from a known `θ_*`.
    pub pair_margins: Option<Vec<((ItemId, ItemId), f64)>>,
}

impl MarginSpec {
    pub fn uniform(delta_star: f64) -> Result<Self> {
        if !(delta_star > 0.0) {
            return Err(Error::Validation(format!("margin must be positive, got {delta_star}")));
        }
        Ok(MarginSpec {
            delta_star,
            pair_margins: None,
        })
    }
}

/// Margins `Δ_ij = |σ(z_ijᵀθ_*) − 1/2|` and `Δ_* = min Δ_ij / |rank(i) − rank(j)|`.
pub fn oracle_margins(pool: &ItemPool, theta_star: &DVector<f64>) -> Result<MarginSpec> {
    let n = pool.len();
    if n < 2 {
        return Err(Error::Validation("margins need at least 2 items".into()));
    }
    let scores: Vec<f64> = (pool.features() * theta_star).iter().copied().collect();
    let mut position = vec![0usize; n];
    for (p, &item) in ranking_from_scores(&scores).iter().enumerate() {
        position[item] = p;
    }
    let mut margins = Vec::with_capacity(n * (n - 1) / 2);
    let mut delta_star = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let f = scores[i] - scores[j];
            let m = (sigmoid(f) - 0.5).abs();
            if f == 0.0 || m == 0.0 {
                return Err(Error::Tie(i, j));
            }
            delta_star = delta_star.min(m / position[i].abs_diff(position[j]) as f64);
            margins.push(((i, j), m));
        }
    }
    Ok(MarginSpec {
        delta_star,
        pair_margins: Some(margins),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Exact form, clamped to `[0, 1]`; exactly 1 when vacuous.
    pub value: f64,
    /// `4dT/(εn)·(α_* + β_*)`, clamped to `[0, 1]`.
    pub approx: f64,
    pub alpha_star: f64,
    pub beta_star: f64,
    /// The validity condition `α_*, β_* ≤ 1/(4dT)` failed.
    pub vacuous: bool,
}

/// Largest `(α, β)` over all pairs at margin `Δ_*`.
pub fn worst_concentration_terms(
    pool: &ItemPool,
    theta: &DVector<f64>,
    hinv: &DMatrix<f64>,
    t: usize,
    consts: &BoundConstants,
    delta_star: f64,
) -> (f64, f64) {
    let x = pool.features();
    let gram = (x * hinv) * x.transpose();
    let u: Vec<f64> = (x * theta).iter().copied().collect();
    let (mut a_star, mut b_star) = (0.0f64, 0.0f64);
    for i in 0..pool.len() {
        for j in (i + 1)..pool.len() {
            let norm_sq = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0);
            let (a, b) = concentration_terms_normalized(sigmoid_deriv(u[i] - u[j]), t as f64 * norm_sq, delta_star, t, consts);
            a_star = a_star.max(a);
            b_star = b_star.max(b);
        }
    }
    (a_star, b_star)
}

/// Upper bound on `P(R(θ_T) ≥ ε)`.
pub fn ordering_error_bound(
    pool: &ItemPool,
    theta: &DVector<f64>,
    hinv: &DMatrix<f64>,
    t: usize,
    eps: f64,
    consts: &BoundConstants,
    margins: &MarginSpec,
) -> Result<BoundReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Validation(format!("eps must lie in (0, 1), got {eps}")));
    }
    if t == 0 || pool.len() < 2 {
        return Err(Error::Validation("bound needs T >= 1 and at least 2 items".into()));
    }
    let (alpha_star, beta_star) = worst_concentration_terms(pool, theta, hinv, t, consts, margins.delta_star);
    Ok(bound_from_terms(alpha_star, beta_star, consts.dim, t, eps, pool.len()))
}

pub fn bound_from_terms(alpha_star: f64, beta_star: f64, dim: usize, t: usize, eps: f64, n: usize) -> BoundReport {
    let scale = 4.0 * dim as f64 * t as f64;
    let prefactor = scale / (eps * n as f64);
    let odds = |p: f64| if p >= 1.0 { f64::INFINITY } else { p / (1.0 - p) };
    let approx = (prefactor * (alpha_star + beta_star)).min(1.0);
    let threshold = 1.0 / scale;
    if alpha_star > threshold || beta_star > threshold {
        return BoundReport {
            value: 1.0,
            approx,
            alpha_star,
            beta_star,
            vacuous: true,
        };
    }
    BoundReport {
        value: (prefactor * (odds(alpha_star) + odds(beta_star))).min(1.0),
        approx,
        alpha_star,
        beta_star,
        vacuous: false,
    }
}

/// Unverifiable per-pair terms evaluated at the true parameter, with
/// `hinv_star = H_T(θ_*)⁻¹`. Only usable when `θ_*` is known.
pub fn true_parameter_terms(
    z: &DVector<f64>,
    theta_star: &DVector<f64>,
    hinv_star: &DMatrix<f64>,
    delta: f64,
    t: usize,
    consts: &BoundConstants,
) -> (f64, f64) {
    let norm_sq = z.dot(&(hinv_star * z)).max(0.0);
    let slope = sigmoid_deriv(theta_star.dot(z));
    let c1 = consts.c1();
    let log_t = (t.max(1) as f64).ln();
    let alpha_den = 8.0 * c1 * slope * slope * norm_sq;
    let beta_den = c1 * norm_sq;
    let alpha = if alpha_den > 0.0 { (-delta * delta / alpha_den + log_t).exp() } else { 0.0 };
    let beta = if beta_den > 0.0 { (-delta / beta_den + log_t).exp() } else { 0.0 };
    (alpha, beta)
}
