//! Pair-selection strategies.
//!
//! Every criterion here is symmetric in `(i, j)`, so only `i < j` pairs are
//! enumerated. Argmax selectors break exact ties toward the lexicographically
//! smallest pair.

mod pairs;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, ItemPool};
use crate::error::{Error, Result};
use crate::info_matrix::GaussianSampler;
use crate::logistic::{binary_entropy_bits, sigmoid, sigmoid_deriv};
use crate::models::TrueSkillState;

pub use pairs::PairSet;

pub const DEFAULT_POSTERIOR_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Guro,
    BayesGuro,
    Bald,
    #[serde(rename = "normmin")]
    NormMin,
    Uniform,
    #[serde(rename = "colstim")]
    CoLstim,
    #[serde(rename = "trueskill")]
    TrueSkill,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 7] = [
        SamplerKind::Guro,
        SamplerKind::BayesGuro,
        SamplerKind::Bald,
        SamplerKind::NormMin,
        SamplerKind::Uniform,
        SamplerKind::CoLstim,
        SamplerKind::TrueSkill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Guro => "guro",
            SamplerKind::BayesGuro => "bayes-guro",
            SamplerKind::Bald => "bald",
            SamplerKind::NormMin => "normmin",
            SamplerKind::Uniform => "uniform",
            SamplerKind::CoLstim => "colstim",
            SamplerKind::TrueSkill => "trueskill",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown sampler `{s}`; valid names: {}", Self::valid_names())))
    }
}

/// Which exponent the BALD expected-entropy term uses: `−μ²/(s² + C²)` as in
/// the closed form, or `−μ²/(2(s² + C²))` as in the Gaussian integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaldExponent {
    #[default]
    Final,
    Derivation,
}

impl FromStr for BaldExponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(BaldExponent::Final),
            "derivation" => Ok(BaldExponent::Derivation),
            other => Err(Error::Validation(format!("unknown BALD exponent `{other}` (final, derivation)"))),
        }
    }
}

/// How the TrueSkill sampler picks a pair.
///
/// `MatchQuality` maximizes `q` over every eligible pair. Since `q` grows as
/// the ratings sharpen, it keeps replaying the first few pairs it settles on.
/// `UncertainFirst` fixes the least certain item and gives it its best match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrueSkillRule {
    MatchQuality,
    #[default]
    UncertainFirst,
}

impl FromStr for TrueSkillRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "match-quality" => Ok(TrueSkillRule::MatchQuality),
            "uncertain-first" => Ok(TrueSkillRule::UncertainFirst),
            other => Err(Error::Validation(format!(
                "unknown trueskill rule `{other}` (match-quality, uncertain-first)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    #[serde(default = "default_posterior_samples")]
    pub posterior_samples: usize,
    /// Evaluate the criterion on at most this many uniformly drawn eligible pairs.
    #[serde(default)]
    pub candidate_cap: Option<usize>,
    /// CoLSTIM confidence width; defaults to `√(d·ln T)`.
    #[serde(default)]
    pub confidence_width: Option<f64>,
    #[serde(default)]
    pub bald_exponent: BaldExponent,
    #[serde(default)]
    pub trueskill_rule: TrueSkillRule,
}

fn default_posterior_samples() -> usize {
    DEFAULT_POSTERIOR_SAMPLES
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind) -> Self {
        SamplerSpec {
            kind,
            posterior_samples: DEFAULT_POSTERIOR_SAMPLES,
            candidate_cap: None,
            confidence_width: None,
            bald_exponent: BaldExponent::Final,
            trueskill_rule: TrueSkillRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SamplerKind::BayesGuro && self.posterior_samples < 2 {
            return Err(Error::Validation("bayes-guro needs at least 2 posterior samples".into()));
        }
        if self.candidate_cap == Some(0) {
            return Err(Error::Validation("candidate cap must be at least 1".into()));
        }
        if let Some(c1) = self.confidence_width {
            if !(c1 >= 0.0) {
                return Err(Error::Validation(format!("confidence width must be nonnegative, got {c1}")));
            }
        }
        Ok(())
    }
}

/// Gaussian summaries of pairwise score differences under a posterior.
///
/// Stores item means `u` and the item covariance `G = X Σ Xᵀ` (plus a
/// diagonal per-item term for hybrid models), so that for any pair
/// `f(i, j) ~ N(u_i − u_j, G_ii + G_jj − 2 G_ij)`.
#[derive(Debug, Clone)]
pub struct PairPosterior {
    means: Vec<f64>,
    gram: DMatrix<f64>,
}

impl PairPosterior {
    /// Contextual model: means `Xθ`, covariance `X Σ Xᵀ` with `Σ = H⁻¹`.
    pub fn contextual(pool: &ItemPool, theta: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        let x = pool.features();
        let means = (x * theta).iter().copied().collect();
        let gram = (x * cov) * x.transpose();
        PairPosterior { means, gram }
    }

    /// Hybrid model with block-diagonal covariance: `θ` block plus independent
    /// per-item offsets with variances `zeta_var`.
    pub fn hybrid(
        pool: &ItemPool,
        theta: &DVector<f64>,
        cov: &DMatrix<f64>,
        zeta: &DVector<f64>,
        zeta_var: &[f64],
    ) -> Self {
        let mut post = Self::contextual(pool, theta, cov);
        for i in 0..post.means.len() {
            post.means[i] += zeta.get(i).copied().unwrap_or(0.0);
            post.gram[(i, i)] += zeta_var.get(i).copied().unwrap_or(0.0);
        }
        post
    }

    pub fn from_parts(means: Vec<f64>, gram: DMatrix<f64>) -> Self {
        PairPosterior { means, gram }
    }

    pub fn n_items(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Mean of `f(i, j)`.
    pub fn mean_diff(&self, i: ItemId, j: ItemId) -> f64 {
        self.means[i] - self.means[j]
    }

    /// `‖z_ij‖²` in the posterior covariance metric, clamped at zero.
    pub fn var_diff(&self, i: ItemId, j: ItemId) -> f64 {
        (self.gram[(i, i)] + self.gram[(j, j)] - 2.0 * self.gram[(i, j)]).max(0.0)
    }

    /// Variance of a single item's score.
    pub fn item_var(&self, i: ItemId) -> f64 {
        self.gram[(i, i)].max(0.0)
    }
}

/// `σ̇(μ)·‖z‖_{H⁻¹}`.
pub fn guro_criterion(mean: f64, var: f64) -> f64 {
    sigmoid_deriv(mean) * var.sqrt()
}

/// `‖z‖_{H⁻¹}`.
pub fn normmin_criterion(var: f64) -> f64 {
    var.sqrt()
}

/// Approximate mutual information between the label and the parameters (bits).
pub fn bald_criterion(mean: f64, var: f64, exponent: BaldExponent) -> f64 {
    let c2 = 4.0 * std::f64::consts::LN_2;
    let predictive = sigmoid(mean / (1.0 + std::f64::consts::PI * var / 8.0).sqrt());
    let denom = var + c2;
    let expo = match exponent {
        BaldExponent::Final => -mean * mean / denom,
        BaldExponent::Derivation => -mean * mean / (2.0 * denom),
    };
    binary_entropy_bits(predictive) - (c2.sqrt() / denom.sqrt()) * expo.exp()
}

/// Lexicographic argmax over `eligible`; NaN criteria never win.
pub fn argmax_pair<F: FnMut(ItemId, ItemId) -> f64>(eligible: &PairSet, mut criterion: F) -> Result<(ItemId, ItemId)> {
    let mut best: Option<((ItemId, ItemId), f64)> = None;
    for (i, j) in eligible.iter() {
        let value = criterion(i, j);
        let better = match best {
            None => true,
            Some((pair, v)) => {
                if value.is_nan() {
                    false
                } else if v.is_nan() {
                    true
                } else {
                    value > v || (value == v && (i, j) < pair)
                }
            }
        };
        if better {
            best = Some(((i, j), value));
        }
    }
    best.map(|(p, _)| p).ok_or(Error::Exhausted)
}

pub fn guro_select(post: &PairPosterior, eligible: &PairSet) -> Result<(ItemId, ItemId)> {
    argmax_pair(eligible, |i, j| guro_criterion(post.mean_diff(i, j), post.var_diff(i, j)))
}

pub fn normmin_select(post: &PairPosterior, eligible: &PairSet) -> Result<(ItemId, ItemId)> {
    argmax_pair(eligible, |i, j| normmin_criterion(post.var_diff(i, j)))
}

pub fn bald_select(post: &PairPosterior, eligible: &PairSet, exponent: BaldExponent) -> Result<(ItemId, ItemId)> {
    argmax_pair(eligible, |i, j| bald_criterion(post.mean_diff(i, j), post.var_diff(i, j), exponent))
}

pub fn uniform_select<R: Rng + ?Sized>(eligible: &PairSet, rng: &mut R) -> Result<(ItemId, ItemId)> {
    eligible.uniform(rng).ok_or(Error::Exhausted)
}

/// Draws item-score samples from a Gaussian posterior over `θ` (and,
/// optionally, independent per-item offsets).
#[derive(Debug, Clone)]
pub struct PosteriorScoreSampler {
    features: DMatrix<f64>,
    theta: GaussianSampler,
    zeta: Option<(DVector<f64>, Vec<f64>)>,
}

impl PosteriorScoreSampler {
    pub fn contextual(pool: &ItemPool, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        Ok(PosteriorScoreSampler {
            features: pool.features().clone(),
            theta: GaussianSampler::new(mean.clone(), cov)?,
            zeta: None,
        })
    }

    pub fn hybrid(
        pool: &ItemPool,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        zeta: &DVector<f64>,
        zeta_var: &[f64],
    ) -> Result<Self> {
        let mut s = Self::contextual(pool, mean, cov)?;
        s.zeta = Some((zeta.clone(), zeta_var.to_vec()));
        Ok(s)
    }

    /// `k × n` matrix of sampled item scores.
    pub fn sample_scores<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DMatrix<f64> {
        let thetas = self.theta.sample(k, rng);
        let mut scores = thetas * self.features.transpose();
        if let Some((mean, var)) = &self.zeta {
            for s in 0..k {
                for i in 0..scores.ncols() {
                    let sd = var.get(i).copied().unwrap_or(0.0).max(0.0).sqrt();
                    let draw: f64 = rng.sample(rand_distr::StandardNormal);
                    scores[(s, i)] += mean.get(i).copied().unwrap_or(0.0) + sd * draw;
                }
            }
        }
        scores
    }
}

/// Unbiased sample variance of `σ(s_i − s_j)` across posterior draws
/// (Welford, so identical draws give exactly zero).
pub fn prediction_variance(scores: &DMatrix<f64>, i: ItemId, j: ItemId) -> f64 {
    let (ci, cj) = (scores.column(i), scores.column(j));
    let (mut mean, mut m2) = (0.0, 0.0);
    for s in 0..scores.nrows() {
        let p = sigmoid(ci[s] - cj[s]);
        let delta = p - mean;
        mean += delta / (s + 1) as f64;
        m2 += delta * (p - mean);
    }
    m2 / (scores.nrows() as f64 - 1.0)
}

pub fn bayes_guro_select<R: Rng + ?Sized>(
    sampler: &PosteriorScoreSampler,
    eligible: &PairSet,
    k: usize,
    rng: &mut R,
) -> Result<(ItemId, ItemId)> {
    if k < 2 {
        return Err(Error::Validation("bayes-guro needs at least 2 posterior samples".into()));
    }
    if eligible.is_empty() {
        return Err(Error::Exhausted);
    }
    let scores = sampler.sample_scores(k, rng);
    match ExpScores::new(&scores) {
        Some(table) => argmax_pair(eligible, |i, j| table.variance(i, j)),
        None => argmax_pair(eligible, |i, j| prediction_variance(&scores, i, j)),
    }
}

/// Per-draw `exp(s − max s)`, so that `σ(s_i − s_j) = a_i / (a_i + a_j)`
/// costs a division instead of an exponential.
struct ExpScores {
    k: usize,
    a: Vec<f64>,
    inv_count: Vec<f64>,
}

impl ExpScores {
    /// Score spread within a draw above which the shifted exponentials could
    /// underflow; the caller then falls back to the direct sigmoid.
    const MAX_SPREAD: f64 = 600.0;

    fn new(scores: &DMatrix<f64>) -> Option<Self> {
        let (k, n) = scores.shape();
        let mut shift = vec![f64::NEG_INFINITY; k];
        let mut low = vec![f64::INFINITY; k];
        for col in scores.column_iter() {
            for (s, &v) in col.iter().enumerate() {
                shift[s] = shift[s].max(v);
                low[s] = low[s].min(v);
            }
        }
        if shift.iter().zip(&low).any(|(hi, lo)| !(hi - lo <= Self::MAX_SPREAD)) {
            return None;
        }
        let mut a = Vec::with_capacity(k * n);
        for col in scores.column_iter() {
            a.extend(col.iter().zip(&shift).map(|(&v, m)| (v - m).exp()));
        }
        let inv_count = (1..=k).map(|c| 1.0 / c as f64).collect();
        Some(ExpScores { k, a, inv_count })
    }

    fn variance(&self, i: ItemId, j: ItemId) -> f64 {
        let ai = &self.a[i * self.k..(i + 1) * self.k];
        let aj = &self.a[j * self.k..(j + 1) * self.k];
        let (mut mean, mut m2) = (0.0, 0.0);
        for ((x, y), w) in ai.iter().zip(aj).zip(&self.inv_count) {
            let p = x / (x + y);
            let delta = p - mean;
            mean += delta * w;
            m2 += delta * (p - mean);
        }
        m2 / (self.k as f64 - 1.0)
    }
}

/// Standard Gumbel draw.
fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// CoLSTIM: a Gumbel-perturbed optimistic leader, then the most optimistic
/// challenger among its eligible partners.
///
/// `design` summarizes `θ` with the unweighted design metric `V⁻¹`, so that
/// `design.item_var(i) = ‖x_i‖²_{V⁻¹}` and `design.var_diff(i, j) = ‖x_i − x_j‖²_{V⁻¹}`.
pub fn colstim_select<R: Rng + ?Sized>(
    design: &PairPosterior,
    eligible: &PairSet,
    c1: f64,
    rng: &mut R,
) -> Result<(ItemId, ItemId)> {
    if eligible.is_empty() {
        return Err(Error::Exhausted);
    }
    let n = design.n_items();
    let perturb: Vec<f64> = (0..n).map(|_| gumbel(rng)).collect();
    let mut leader: Option<(ItemId, f64)> = None;
    for i in eligible.items() {
        let u = design.means()[i] + c1 * perturb[i] * design.item_var(i).sqrt();
        if leader.is_none_or(|(_, best)| u > best) {
            leader = Some((i, u));
        }
    }
    let (i, _) = leader.ok_or(Error::Exhausted)?;
    let partners = eligible.partners(i);
    let informative = partners.iter().any(|&j| design.var_diff(i, j) > 0.0);
    let mut challenger: Option<(ItemId, f64)> = None;
    for j in partners {
        let spread = design.var_diff(i, j);
        if informative && spread == 0.0 {
            continue;
        }
        let u = design.means()[j] + c1 * spread.sqrt();
        if challenger.is_none_or(|(_, best)| u > best) {
            challenger = Some((j, u));
        }
    }
    let (j, _) = challenger.ok_or(Error::Exhausted)?;
    Ok((i.min(j), i.max(j)))
}

pub fn default_confidence_width(dim: usize, budget: usize) -> f64 {
    (dim as f64 * (budget.max(2) as f64).ln()).sqrt()
}

pub fn trueskill_select(state: &TrueSkillState, eligible: &PairSet) -> Result<(ItemId, ItemId)> {
    argmax_pair(eligible, |i, j| state.match_quality(i, j))
}

/// Largest `σ²` item among those with an eligible partner, then its best match.
pub fn trueskill_uncertain_select(state: &TrueSkillState, eligible: &PairSet) -> Result<(ItemId, ItemId)> {
    let mut anchor: Option<(ItemId, f64)> = None;
    for i in eligible.items() {
        let v = state.sigma2[i];
        if anchor.is_none_or(|(_, best)| v > best) {
            anchor = Some((i, v));
        }
    }
    let (i, _) = anchor.ok_or(Error::Exhausted)?;
    let mut best: Option<(ItemId, f64)> = None;
    for j in eligible.partners(i) {
        let q = state.match_quality(i, j);
        if best.is_none_or(|(_, b)| q > b) {
            best = Some((j, q));
        }
    }
    let (j, _) = best.ok_or(Error::Exhausted)?;
    Ok((i.min(j), i.max(j)))
}

pub fn trueskill_select_with(
    rule: TrueSkillRule,
    state: &TrueSkillState,
    eligible: &PairSet,
) -> Result<(ItemId, ItemId)> {
    match rule {
        TrueSkillRule::MatchQuality => trueskill_select(state, eligible),
        TrueSkillRule::UncertainFirst => trueskill_uncertain_select(state, eligible),
    }
}

/// Uniform subset of `min(m, |eligible|)` pairs, in lexicographic order.
pub fn subsample_candidates<R: Rng + ?Sized>(eligible: &PairSet, m: usize, rng: &mut R) -> PairSet {
    let len = eligible.len();
    if m >= len {
        return eligible.clone();
    }
    let mut picks: Vec<usize> = index::sample(rng, len, m).into_vec();
    picks.sort_unstable();
    match eligible {
        PairSet::Listed(v) => PairSet::Listed(picks.into_iter().map(|k| v[k]).collect()),
        PairSet::All { .. } => PairSet::Listed(picks.into_iter().filter_map(|k| eligible.nth(k)).collect()),
    }
}
