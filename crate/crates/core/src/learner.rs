//! The active-learning loop state: model, information matrices and sampler.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ComparisonHistory, ItemId, ItemPool};
use crate::error::{Error, Result};
use crate::info_matrix::{observed_fisher, InfoMatrix};
use crate::logistic::sigmoid_deriv;
use crate::models::{
    fit_hybrid_from, fit_map_from, fit_mle_from, ranking_from_scores, BayesLinearModel, HybridModel, LinearModel,
    Scorer, TrueSkillState,
};
use crate::rng::{substream, Stream, StreamRng};
use crate::samplers::{
    bald_select, bayes_guro_select, colstim_select, default_confidence_width, guro_select, normmin_select,
    subsample_candidates, trueskill_select_with, uniform_select, PairPosterior, PairSet, PosteriorScoreSampler,
    SamplerKind, SamplerSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Contextual,
    Hybrid,
    Bayes,
    TrueSkill,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Contextual, ModelKind::Hybrid, ModelKind::Bayes, ModelKind::TrueSkill];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Contextual => "contextual",
            ModelKind::Hybrid => "hybrid",
            ModelKind::Bayes => "bayes",
            ModelKind::TrueSkill => "trueskill",
        }
    }

    /// The model each sampler is paired with unless configured otherwise.
    pub fn default_for(sampler: SamplerKind) -> Self {
        match sampler {
            SamplerKind::BayesGuro | SamplerKind::Bald => ModelKind::Bayes,
            SamplerKind::TrueSkill => ModelKind::TrueSkill,
            _ => ModelKind::Contextual,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Validation(format!("unknown model `{s}`; valid names: contextual, hybrid, bayes, trueskill"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub sampler: SamplerSpec,
    pub model: ModelKind,
    /// Ridge on `θ`; also the prior precision of the Bayesian model.
    pub reg: f64,
    pub reg_zeta: f64,
    /// Refit the model after every `refit_stride`-th observation.
    pub refit_stride: usize,
    /// Annotation budget, used for the default CoLSTIM width.
    pub budget: usize,
}

impl LearnerConfig {
    pub fn new(sampler: SamplerKind) -> Self {
        LearnerConfig {
            sampler: SamplerSpec::new(sampler),
            model: ModelKind::default_for(sampler),
            reg: 1.0,
            reg_zeta: 1.0,
            refit_stride: 1,
            budget: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if !(self.reg > 0.0 && self.reg_zeta > 0.0) {
            return Err(Error::Config("regularization must be positive".into()));
        }
        if self.refit_stride == 0 {
            return Err(Error::Config("refit stride must be at least 1".into()));
        }
        let ts_model = self.model == ModelKind::TrueSkill;
        match self.sampler.kind {
            SamplerKind::TrueSkill if !ts_model => {
                Err(Error::Config("the trueskill sampler needs the trueskill model".into()))
            }
            SamplerKind::TrueSkill | SamplerKind::Uniform => Ok(()),
            other if ts_model => Err(Error::Config(format!("sampler `{other}` cannot drive the trueskill model"))),
            SamplerKind::CoLstim if self.model != ModelKind::Contextual => {
                Err(Error::Config("colstim needs the contextual model".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ModelState {
    Contextual(LinearModel),
    Bayes(BayesLinearModel),
    Hybrid(HybridModel),
    TrueSkill(TrueSkillState),
}

impl ModelState {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelState::Contextual(_) => ModelKind::Contextual,
            ModelState::Bayes(_) => ModelKind::Bayes,
            ModelState::Hybrid(_) => ModelKind::Hybrid,
            ModelState::TrueSkill(_) => ModelKind::TrueSkill,
        }
    }

    /// Contextual coefficients, if the model has any.
    pub fn theta(&self) -> Option<&DVector<f64>> {
        match self {
            ModelState::Contextual(m) => Some(&m.theta),
            ModelState::Bayes(m) => Some(&m.theta_map),
            ModelState::Hybrid(m) => Some(&m.theta),
            ModelState::TrueSkill(_) => None,
        }
    }

    pub fn zeta(&self) -> Option<&DVector<f64>> {
        match self {
            ModelState::Hybrid(m) => Some(&m.zeta),
            _ => None,
        }
    }
}

impl Scorer for ModelState {
    fn item_scores(&self, pool: &ItemPool) -> Vec<f64> {
        match self {
            ModelState::Contextual(m) => m.item_scores(pool),
            ModelState::Bayes(m) => m.item_scores(pool),
            ModelState::Hybrid(m) => m.item_scores(pool),
            ModelState::TrueSkill(m) => m.item_scores(pool),
        }
    }
}

/// One run of the select, observe, refit loop.
#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    pool: ItemPool,
    history: ComparisonHistory,
    state: ModelState,
    /// Curvature at the current estimate; the Laplace posterior for the Bayesian model.
    info: Option<InfoMatrix>,
    /// Per-item offset precision for the hybrid model.
    zeta_precision: Vec<f64>,
    /// Unweighted design `ridge·I + Σ zzᵀ` (CoLSTIM only).
    design: Option<InfoMatrix>,
    sampler_rng: StreamRng,
    posterior_rng: StreamRng,
    subsample_rng: StreamRng,
}

impl Learner {
    pub fn new(pool: ItemPool, config: LearnerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if pool.len() < 2 {
            return Err(Error::Validation("a learner needs at least 2 items".into()));
        }
        let (d, n) = (pool.dim(), pool.len());
        let state = match config.model {
            ModelKind::Contextual => ModelState::Contextual(LinearModel::zeros(d, config.reg)),
            ModelKind::Bayes => ModelState::Bayes(BayesLinearModel::from_prior(
                DVector::zeros(d),
                DMatrix::identity(d, d) * config.reg,
            )?),
            ModelKind::Hybrid => ModelState::Hybrid(HybridModel::zeros(d, n, config.reg, config.reg_zeta)),
            ModelKind::TrueSkill => ModelState::TrueSkill(TrueSkillState::new(n)),
        };
        let info = match config.model {
            ModelKind::TrueSkill => None,
            _ => Some(InfoMatrix::prior(d, config.reg)?),
        };
        let design = if config.sampler.kind == SamplerKind::CoLstim {
            Some(InfoMatrix::prior(d, config.reg)?)
        } else {
            None
        };
        let zeta_precision = vec![config.reg_zeta; n];
        Ok(Learner {
            config,
            pool,
            history: ComparisonHistory::new(),
            state,
            info,
            zeta_precision,
            design,
            sampler_rng: substream(seed, Stream::Sampler),
            posterior_rng: substream(seed, Stream::Posterior),
            subsample_rng: substream(seed, Stream::Subsample),
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn pool(&self) -> &ItemPool {
        &self.pool
    }

    pub fn history(&self) -> &ComparisonHistory {
        &self.history
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn info(&self) -> Option<&InfoMatrix> {
        self.info.as_ref()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.state.item_scores(&self.pool)
    }

    pub fn ranking(&self) -> Vec<ItemId> {
        ranking_from_scores(&self.scores())
    }

    /// Per-item score standard deviation under the current Gaussian
    /// approximation (`‖x_i‖_{H⁻¹}`, plus the offset variance for hybrid
    /// models; the rating spread for TrueSkill).
    pub fn score_std(&self) -> Result<Vec<f64>> {
        if let ModelState::TrueSkill(s) = &self.state {
            return Ok(s.sigma2.iter().map(|v| v.sqrt()).collect());
        }
        let post = self.posterior()?;
        Ok((0..self.pool.len()).map(|i| post.item_var(i).max(0.0).sqrt()).collect())
    }

    fn posterior(&self) -> Result<PairPosterior> {
        let theta = self.state.theta().ok_or(Error::Config("model has no contextual posterior".into()))?;
        let info = self.info.as_ref().ok_or(Error::Config("model has no information matrix".into()))?;
        Ok(match &self.state {
            ModelState::Hybrid(m) => {
                let var: Vec<f64> = self.zeta_precision.iter().map(|p| 1.0 / p).collect();
                PairPosterior::hybrid(&self.pool, theta, info.hinv(), &m.zeta, &var)
            }
            _ => PairPosterior::contextual(&self.pool, theta, info.hinv()),
        })
    }

    fn score_sampler(&self) -> Result<PosteriorScoreSampler> {
        let theta = self.state.theta().ok_or(Error::Config("model has no contextual posterior".into()))?;
        let info = self.info.as_ref().ok_or(Error::Config("model has no information matrix".into()))?;
        match &self.state {
            ModelState::Hybrid(m) => {
                let var: Vec<f64> = self.zeta_precision.iter().map(|p| 1.0 / p).collect();
                PosteriorScoreSampler::hybrid(&self.pool, theta, info.hinv(), &m.zeta, &var)
            }
            _ => PosteriorScoreSampler::contextual(&self.pool, theta, info.hinv()),
        }
    }

    /// Chooses the next pair among `eligible`.
    pub fn select(&mut self, eligible: &PairSet) -> Result<(ItemId, ItemId)> {
        if eligible.is_empty() {
            return Err(Error::Exhausted);
        }
        let candidates = match self.config.sampler.candidate_cap {
            Some(m) if self.config.sampler.kind != SamplerKind::Uniform => {
                subsample_candidates(eligible, m, &mut self.subsample_rng)
            }
            _ => eligible.clone(),
        };
        let spec = &self.config.sampler;
        match spec.kind {
            SamplerKind::Guro => guro_select(&self.posterior()?, &candidates),
            SamplerKind::NormMin => normmin_select(&self.posterior()?, &candidates),
            SamplerKind::Bald => bald_select(&self.posterior()?, &candidates, spec.bald_exponent),
            SamplerKind::BayesGuro => {
                let k = spec.posterior_samples;
                let sampler = self.score_sampler()?;
                bayes_guro_select(&sampler, &candidates, k, &mut self.posterior_rng)
            }
            SamplerKind::Uniform => uniform_select(&candidates, &mut self.sampler_rng),
            SamplerKind::CoLstim => {
                let design = self.design.as_ref().ok_or(Error::Config("colstim design missing".into()))?;
                let theta = self.state.theta().ok_or(Error::Config("colstim needs a contextual model".into()))?;
                let post = PairPosterior::contextual(&self.pool, theta, design.hinv());
                let c1 = spec
                    .confidence_width
                    .unwrap_or_else(|| default_confidence_width(self.pool.dim(), self.config.budget));
                colstim_select(&post, &candidates, c1, &mut self.sampler_rng)
            }
            SamplerKind::TrueSkill => match &self.state {
                ModelState::TrueSkill(s) => trueskill_select_with(self.config.sampler.trueskill_rule, s, &candidates),
                _ => Err(Error::Config("the trueskill sampler needs the trueskill model".into())),
            },
        }
    }

    /// Records the answer `c` ("`i` beat `j`") and updates the model state.
    pub fn observe(&mut self, i: ItemId, j: ItemId, c: bool) -> Result<()> {
        self.pool.check_pair(i, j)?;
        self.history.push(i, j, c)?;
        if let ModelState::TrueSkill(s) = &mut self.state {
            return s.update(i, j, c);
        }
        let z = self.pool.diff_vector(i, j)?;
        let margin = match &self.state {
            ModelState::Hybrid(m) => m.theta.dot(&z) + m.zeta[i] - m.zeta[j],
            other => other.theta().map_or(0.0, |t| t.dot(&z)),
        };
        let w = sigmoid_deriv(margin);
        if let Some(info) = &mut self.info {
            info.sherman_morrison_update(&z, w);
        }
        if matches!(self.state, ModelState::Hybrid(_)) {
            self.zeta_precision[i] += w;
            self.zeta_precision[j] += w;
        }
        if let Some(design) = &mut self.design {
            design.sherman_morrison_update(&z, 1.0);
        }
        if self.history.len() % self.config.refit_stride == 0 {
            self.refit()?;
        }
        Ok(())
    }

    /// Refits the model on the full history and recomputes its curvature there.
    pub fn refit(&mut self) -> Result<()> {
        let reg = self.config.reg;
        match &mut self.state {
            ModelState::TrueSkill(_) => {}
            ModelState::Contextual(m) => {
                *m = fit_mle_from(&self.history, &self.pool, reg, Some(&m.theta))?;
                self.info = Some(observed_fisher(&self.history, &self.pool, &m.theta, reg)?);
            }
            ModelState::Bayes(m) => {
                let warm = m.theta_map.clone();
                *m = fit_map_from(&self.history, &self.pool, &m.prior_mean, &m.prior_precision, Some(&warm))?;
                self.info = Some(m.posterior.clone());
            }
            ModelState::Hybrid(m) => {
                *m = fit_hybrid_from(&self.history, &self.pool, reg, self.config.reg_zeta, Some(&*m))?;
                self.info = Some(observed_fisher(&self.history, &self.pool, &m.theta, reg)?);
                self.zeta_precision = vec![self.config.reg_zeta; self.pool.len()];
                for rec in self.history.records() {
                    let f = m.theta.dot(&self.pool.diff_vector(rec.i, rec.j)?) + m.zeta[rec.i] - m.zeta[rec.j];
                    let w = sigmoid_deriv(f);
                    self.zeta_precision[rec.i] += w;
                    self.zeta_precision[rec.j] += w;
                }
            }
        }
        Ok(())
    }

    /// Appends new items; per-item state for them starts at the prior.
    pub fn add_items(&mut self, items: &ItemPool) -> Result<()> {
        self.pool.append(items)?;
        let n = self.pool.len();
        match &mut self.state {
            ModelState::Hybrid(m) => m.extend_items(n),
            ModelState::TrueSkill(s) => s.extend_items(n),
            _ => {}
        }
        self.zeta_precision.resize(n, self.config.reg_zeta);
        Ok(())
    }
}
