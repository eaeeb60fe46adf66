//! Seeded experiment runs, trajectory files, aggregation and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bounds::{oracle_margins, ordering_error_bound, BoundConstants, BoundReport, MarginSpec};
use crate::data::{load_dataset, split_generalization, ComparisonPool, ItemPool};
use crate::error::{Error, Result};
use crate::learner::{Learner, LearnerConfig, ModelKind};
use crate::rng::{substream, Stream};
use crate::samplers::{BaldExponent, PairSet, SamplerKind, SamplerSpec, TrueSkillRule};
use crate::sim::{
    generate_instance, holdout_error, ordering_error, synthetic_annotations, LogisticAnnotator, ReplayAnnotator,
    SyntheticInstance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SyntheticLogistic,
    ReplayPool,
    GeneralizationSplit,
    FewShotAdd,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::SyntheticLogistic,
        Scenario::ReplayPool,
        Scenario::GeneralizationSplit,
        Scenario::FewShotAdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SyntheticLogistic => "synthetic-logistic",
            Scenario::ReplayPool => "replay-pool",
            Scenario::GeneralizationSplit => "generalization-split",
            Scenario::FewShotAdd => "few-shot-add",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub sampler: SamplerSpec,
    /// Defaults to the sampler's usual model.
    pub model: Option<ModelKind>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub eval_stride: usize,
    pub refit_stride: usize,
    pub reg: f64,
    pub reg_zeta: f64,
    /// Evaluate the ordering-error bound at this `ε` (synthetic scenarios only).
    pub bound_eps: Option<f64>,
    pub n_items: usize,
    pub dim: usize,
    pub theta_range: f64,
    pub noise: f64,
    /// Few-shot: items known at the start, and the step after which the rest arrive.
    pub initial_items: usize,
    pub add_at: usize,
    /// Replay: item and comparison files; synthetic pools are generated when absent.
    pub items: Option<PathBuf>,
    pub comparisons: Option<PathBuf>,
    pub holdout_fraction: f64,
    pub synthetic_annotations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::SyntheticLogistic,
            sampler: SamplerSpec::new(SamplerKind::Guro),
            model: None,
            budget: 2000,
            seeds: vec![0],
            eval_stride: 10,
            refit_stride: 1,
            reg: 1.0,
            reg_zeta: 1.0,
            bound_eps: None,
            n_items: 100,
            dim: 10,
            theta_range: 3.0,
            noise: 0.5,
            initial_items: 50,
            add_at: 1000,
            items: None,
            comparisons: None,
            holdout_fraction: 0.1,
            synthetic_annotations: 5000,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// `1,2,5` or a half-open range `0..50`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse_value("seeds", a.trim())?, parse_value("seeds", b.trim())?);
        (a..b).collect()
    } else {
        value
            .split(',')
            .map(|s| parse_value("seeds", s.trim()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Parses a flat `key = value` file; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = value.parse()?,
            "sampler" => {
                let kind: SamplerKind = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
                self.sampler.kind = kind;
            }
            "model" => self.model = Some(value.parse().map_err(|e: Error| Error::Config(e.to_string()))?),
            "budget" => self.budget = parse_value(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "eval_stride" => self.eval_stride = parse_value(key, value)?,
            "refit_stride" => self.refit_stride = parse_value(key, value)?,
            "reg" => self.reg = parse_value(key, value)?,
            "reg_zeta" => self.reg_zeta = parse_value(key, value)?,
            "bound_eps" => self.bound_eps = Some(parse_value(key, value)?),
            "posterior_samples" => self.sampler.posterior_samples = parse_value(key, value)?,
            "candidate_cap" => self.sampler.candidate_cap = Some(parse_value(key, value)?),
            "confidence_width" => self.sampler.confidence_width = Some(parse_value(key, value)?),
            "bald_exponent" => {
                self.sampler.bald_exponent =
                    value.parse::<BaldExponent>().map_err(|e| Error::Config(e.to_string()))?
            }
            "trueskill_rule" => {
                self.sampler.trueskill_rule =
                    value.parse::<TrueSkillRule>().map_err(|e| Error::Config(e.to_string()))?
            }
            "n_items" => self.n_items = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "theta_range" => self.theta_range = parse_value(key, value)?,
            "noise" => self.noise = parse_value(key, value)?,
            "initial_items" => self.initial_items = parse_value(key, value)?,
            "add_at" => self.add_at = parse_value(key, value)?,
            "items" => self.items = Some(PathBuf::from(value)),
            "comparisons" => self.comparisons = Some(PathBuf::from(value)),
            "holdout_fraction" => self.holdout_fraction = parse_value(key, value)?,
            "synthetic_annotations" => self.synthetic_annotations = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model.unwrap_or_else(|| ModelKind::default_for(self.sampler.kind))
    }

    /// Sampler name, suffixed with the model when it is not the sampler's default.
    pub fn algorithm(&self) -> String {
        let model = self.model_kind();
        if model == ModelKind::default_for(self.sampler.kind) {
            self.sampler.kind.to_string()
        } else {
            format!("{}-{}", self.sampler.kind, model)
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            sampler: self.sampler.clone(),
            model: self.model_kind(),
            reg: self.reg,
            reg_zeta: self.reg_zeta,
            refit_stride: self.refit_stride,
            budget: self.budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.eval_stride == 0 {
            return Err(Error::Config("eval_stride must be at least 1".into()));
        }
        if let Some(eps) = self.bound_eps {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Config(format!("bound_eps must lie in (0, 1), got {eps}")));
            }
        }
        if !(self.noise > 0.0) || !(self.theta_range > 0.0) {
            return Err(Error::Config("noise and theta_range must be positive".into()));
        }
        let min_items = if self.scenario == Scenario::GeneralizationSplit { 4 } else { 2 };
        if self.items.is_none() && (self.n_items < min_items || self.dim == 0) {
            return Err(Error::Config(format!("need n_items >= {min_items} and dim >= 1")));
        }
        if self.scenario == Scenario::FewShotAdd && !(2..self.n_items).contains(&self.initial_items) {
            return Err(Error::Config("initial_items must be at least 2 and below n_items".into()));
        }
        if self.scenario == Scenario::ReplayPool && self.comparisons.is_some() && self.items.is_none() {
            return Err(Error::Config("a comparisons file needs an items file".into()));
        }
        self.learner_config().validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// One evaluated step of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub algorithm: String,
    pub seed: u64,
    pub step: usize,
    pub ordering_error: Option<f64>,
    pub eval_ordering_error: Option<f64>,
    pub generalization_gap: Option<f64>,
    pub holdout_error: Option<f64>,
    pub bound: Option<f64>,
    pub bound_approx: Option<f64>,
    pub alpha_star: Option<f64>,
    pub beta_star: Option<f64>,
    pub bound_vacuous: Option<bool>,
    pub pair_i: usize,
    pub pair_j: usize,
    pub truncated: bool,
}

pub const METRICS: [&str; 8] = [
    "ordering_error",
    "eval_ordering_error",
    "generalization_gap",
    "holdout_error",
    "bound",
    "bound_approx",
    "alpha_star",
    "beta_star",
];

impl TrajectoryRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "ordering_error" => self.ordering_error,
            "eval_ordering_error" => self.eval_ordering_error,
            "generalization_gap" => self.generalization_gap,
            "holdout_error" => self.holdout_error,
            "bound" => self.bound,
            "bound_approx" => self.bound_approx,
            "alpha_star" => self.alpha_star,
            "beta_star" => self.beta_star,
            _ => None,
        }
    }
}

/// Wall-clock time per record, kept apart so trajectories stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub seed: u64,
    pub step: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub records: Vec<TrajectoryRecord>,
    pub timing: Vec<TimingRecord>,
}

enum Annotator {
    Logistic(LogisticAnnotator),
    Replay(ReplayAnnotator, crate::rng::StreamRng),
}

/// Ground truth known to the evaluation, per scenario.
struct Evaluation {
    truth: Option<Vec<f64>>,
    eval_pool: Option<(ItemPool, Vec<f64>)>,
    holdout: Vec<crate::data::Annotation>,
    bound: Option<(f64, SyntheticInstance, MarginSpec)>,
}

struct Setup {
    learner: Learner,
    annotator: Annotator,
    eval: Evaluation,
    /// Items appended after `add_at` in the few-shot scenario.
    pending_items: Option<ItemPool>,
}

fn logistic(inst: &SyntheticInstance, config: &ExperimentConfig, seed: u64) -> Result<LogisticAnnotator> {
    LogisticAnnotator::new(inst.theta_star.clone(), config.noise, substream(seed, Stream::Annotator))
}

fn setup(config: &ExperimentConfig, seed: u64) -> Result<Setup> {
    let lc = config.learner_config();
    let mut instance_rng = substream(seed, Stream::Instance);
    let bounded = lc.model != ModelKind::TrueSkill;
    let bound_for = |inst: &SyntheticInstance| -> Result<Option<(f64, SyntheticInstance, MarginSpec)>> {
        match config.bound_eps {
            Some(eps) if bounded => {
                Ok(Some((eps, inst.clone(), oracle_margins(&inst.pool, &inst.theta_star)?)))
            }
            _ => Ok(None),
        }
    };
    match config.scenario {
        Scenario::SyntheticLogistic => {
            let inst = generate_instance(config.n_items, config.dim, config.theta_range, &mut instance_rng)?;
            let truth = inst.pool.true_scores().map(<[f64]>::to_vec);
            Ok(Setup {
                learner: Learner::new(inst.pool.clone(), lc, seed)?,
                annotator: Annotator::Logistic(logistic(&inst, config, seed)?),
                eval: Evaluation {
                    truth,
                    eval_pool: None,
                    holdout: Vec::new(),
                    bound: bound_for(&inst)?,
                },
                pending_items: None,
            })
        }
        Scenario::GeneralizationSplit => {
            let inst = generate_instance(config.n_items, config.dim, config.theta_range, &mut instance_rng)?;
            let scores = inst.pool.true_scores().unwrap_or_default().to_vec();
            let split = split_generalization(&inst.pool, &scores)?;
            let train_truth = split.train.true_scores().map(<[f64]>::to_vec);
            let eval_truth = split.eval.true_scores().unwrap_or_default().to_vec();
            let train_inst = SyntheticInstance {
                pool: split.train.clone(),
                theta_star: inst.theta_star.clone(),
            };
            Ok(Setup {
                learner: Learner::new(split.train.clone(), lc, seed)?,
                annotator: Annotator::Logistic(logistic(&inst, config, seed)?),
                eval: Evaluation {
                    truth: train_truth,
                    eval_pool: Some((split.eval, eval_truth)),
                    holdout: Vec::new(),
                    bound: bound_for(&train_inst)?,
                },
                pending_items: None,
            })
        }
        Scenario::FewShotAdd => {
            let inst = generate_instance(config.n_items, config.dim, config.theta_range, &mut instance_rng)?;
            let first: Vec<usize> = (0..config.initial_items).collect();
            let rest: Vec<usize> = (config.initial_items..config.n_items).collect();
            let initial = inst.pool.subset(&first);
            let truth = initial.true_scores().map(<[f64]>::to_vec);
            Ok(Setup {
                learner: Learner::new(initial, lc, seed)?,
                annotator: Annotator::Logistic(logistic(&inst, config, seed)?),
                eval: Evaluation {
                    truth,
                    eval_pool: None,
                    holdout: Vec::new(),
                    bound: None,
                },
                pending_items: Some(inst.pool.subset(&rest)),
            })
        }
        Scenario::ReplayPool => {
            let (pool, comparisons) = match &config.items {
                Some(items) => {
                    let (pool, comparisons) =
                        load_dataset(items, config.comparisons.as_deref(), config.holdout_fraction, seed)?;
                    let comparisons = comparisons
                        .ok_or_else(|| Error::Config("replay-pool with an items file needs comparisons".into()))?;
                    (pool, comparisons)
                }
                None => {
                    let inst = generate_instance(config.n_items, config.dim, config.theta_range, &mut instance_rng)?;
                    let mut ann = logistic(&inst, config, seed)?;
                    let anns =
                        synthetic_annotations(&inst.pool, &mut ann, config.synthetic_annotations, &mut instance_rng)?;
                    let mut holdout_rng = substream(seed, Stream::Holdout);
                    (inst.pool, ComparisonPool::split(anns, config.holdout_fraction, &mut holdout_rng)?)
                }
            };
            let truth = pool.true_scores().map(<[f64]>::to_vec);
            Ok(Setup {
                learner: Learner::new(pool, lc, seed)?,
                annotator: Annotator::Replay(
                    ReplayAnnotator::new(&comparisons.replay),
                    substream(seed, Stream::Replay),
                ),
                eval: Evaluation {
                    truth,
                    eval_pool: None,
                    holdout: comparisons.holdout,
                    bound: None,
                },
                pending_items: None,
            })
        }
    }
}

fn bound_report(learner: &Learner, t: usize, eps: f64, inst: &SyntheticInstance, margins: &MarginSpec) -> Result<Option<BoundReport>> {
    let (Some(theta), Some(info)) = (learner.state().theta(), learner.info()) else {
        return Ok(None);
    };
    let consts = BoundConstants::from_instance(&inst.theta_star, &inst.pool, info.h(), t)?;
    Ok(Some(ordering_error_bound(&inst.pool, theta, info.hinv(), t, eps, &consts, margins)?))
}

fn evaluate(learner: &Learner, eval: &Evaluation, algorithm: &str, seed: u64, step: usize, pair: (usize, usize)) -> Result<TrajectoryRecord> {
    let scores = learner.scores();
    let ordering = match &eval.truth {
        Some(t) if t.len() == scores.len() => Some(ordering_error(&scores, t)?),
        _ => None,
    };
    let (eval_ordering, gap) = match &eval.eval_pool {
        Some((pool, truth)) => {
            let e = ordering_error(&crate::models::Scorer::item_scores(learner.state(), pool), truth)?;
            (Some(e), ordering.map(|o| e - o))
        }
        None => (None, None),
    };
    let holdout = if eval.holdout.is_empty() {
        None
    } else {
        Some(holdout_error(learner.state(), learner.pool(), &eval.holdout)?)
    };
    let bound = match &eval.bound {
        Some((eps, inst, margins)) if step > 0 => bound_report(learner, step, *eps, inst, margins)?,
        _ => None,
    };
    Ok(TrajectoryRecord {
        algorithm: algorithm.to_string(),
        seed,
        step,
        ordering_error: ordering,
        eval_ordering_error: eval_ordering,
        generalization_gap: gap,
        holdout_error: holdout,
        bound: bound.map(|b| b.value),
        bound_approx: bound.map(|b| b.approx),
        alpha_star: bound.map(|b| b.alpha_star),
        beta_star: bound.map(|b| b.beta_star),
        bound_vacuous: bound.map(|b| b.vacuous),
        pair_i: pair.0,
        pair_j: pair.1,
        truncated: false,
    })
}

/// One full seeded run.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let algorithm = config.algorithm();
    let Setup {
        mut learner,
        mut annotator,
        mut eval,
        mut pending_items,
    } = setup(config, seed)?;
    let start = Instant::now();
    let mut records = Vec::new();
    let mut timing = Vec::new();
    let mut last_pair = (0, 0);
    for t in 1..=config.budget {
        let eligible = match &annotator {
            Annotator::Replay(r, _) => r.eligible(),
            Annotator::Logistic(_) => PairSet::all(learner.pool().len()),
        };
        if eligible.is_empty() {
            let mut rec = evaluate(&learner, &eval, &algorithm, seed, t - 1, last_pair)?;
            rec.truncated = true;
            if records.last().is_some_and(|r: &TrajectoryRecord| r.step == rec.step) {
                records.pop();
                timing.pop();
            }
            records.push(rec);
            timing.push(TimingRecord {
                seed,
                step: t - 1,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            log::info!("seed {seed}: replay pool exhausted after {} steps", t - 1);
            break;
        }
        let (i, j) = learner.select(&eligible)?;
        let c = match &mut annotator {
            Annotator::Logistic(a) => a.annotate(&learner.pool().diff_vector(i, j)?),
            Annotator::Replay(r, rng) => r.annotate(i, j, rng)?,
        };
        learner.observe(i, j, c)?;
        last_pair = (i, j);
        if t == config.add_at {
            if let Some(extra) = pending_items.take() {
                learner.add_items(&extra)?;
                if let Some(truth) = &mut eval.truth {
                    truth.extend_from_slice(extra.true_scores().unwrap_or_default());
                }
            }
        }
        if t % config.eval_stride == 0 || t == config.budget {
            records.push(evaluate(&learner, &eval, &algorithm, seed, t, (i, j))?);
            timing.push(TimingRecord {
                seed,
                step: t,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(SeedRun { records, timing })
}

/// All seeds of `config`, in seed-list order. Seeds run in parallel; each
/// derives its randomness from its own seed only, so the result is the same
/// as a serial run.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    config.validate()?;
    config.seeds.par_iter().map(|&seed| run_seed(config, seed)).collect()
}

/// Runs `config` and writes the trajectory CSV to `out` plus a
/// `<out>.timing.csv` sidecar.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Vec<TrajectoryRecord>> {
    let runs = run_all(config)?;
    let records: Vec<TrajectoryRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    write_trajectory(&records, File::create(out)?)?;
    let mut timing = csv::Writer::from_path(timing_path(out))?;
    for t in runs.iter().flat_map(|r| &r.timing) {
        timing.serialize(t)?;
    }
    timing.flush()?;
    Ok(records)
}

pub fn timing_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".timing.csv");
    out.with_file_name(name)
}

pub fn write_trajectory<W: Write>(records: &[TrajectoryRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record(TRAJECTORY_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const TRAJECTORY_HEADER: [&str; 15] = [
    "algorithm",
    "seed",
    "step",
    "ordering_error",
    "eval_ordering_error",
    "generalization_gap",
    "holdout_error",
    "bound",
    "bound_approx",
    "alpha_star",
    "beta_star",
    "bound_vacuous",
    "pair_i",
    "pair_j",
    "truncated",
];

pub fn read_trajectory<R: Read>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Mean, standard deviation and 95% t-interval of one metric at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub step: usize,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub algorithm: String,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// `(mean, sd, ci_lo, ci_hi)` with the two-sided 95% Student-t interval.
pub fn mean_ci(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let q = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN);
    let half = q * sd / (n as f64).sqrt();
    (mean, sd, mean - half, mean + half)
}

/// Aggregates per `(algorithm, step, metric)` across seeds.
///
/// Every seed of an algorithm must report the same steps.
pub fn aggregate_runs(records: &[TrajectoryRecord]) -> Result<Summary> {
    let mut grids: BTreeMap<&str, BTreeMap<u64, Vec<usize>>> = BTreeMap::new();
    for r in records {
        grids.entry(&r.algorithm).or_default().entry(r.seed).or_default().push(r.step);
    }
    for (alg, seeds) in &grids {
        let mut it = seeds.iter();
        if let Some((first_seed, grid)) = it.next() {
            for (seed, other) in it {
                if other != grid {
                    return Err(Error::Alignment(format!(
                        "algorithm {alg}: seed {seed} steps differ from seed {first_seed}"
                    )));
                }
            }
        }
    }
    let mut groups: BTreeMap<(&str, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        for (k, metric) in METRICS.iter().enumerate() {
            if let Some(v) = r.metric(metric) {
                groups.entry((&r.algorithm, r.step, k)).or_default().push(v);
            }
        }
    }
    let rows = groups
        .into_iter()
        .map(|((alg, step, k), values)| {
            let (mean, sd, ci_lo, ci_hi) = mean_ci(&values);
            SummaryRow {
                step,
                metric: METRICS[k].to_string(),
                mean,
                sd,
                ci_lo,
                ci_hi,
                algorithm: alg.to_string(),
                n: values.len(),
            }
        })
        .collect();
    Ok(Summary { rows })
}

pub fn aggregate_files(paths: &[PathBuf]) -> Result<Summary> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_trajectory(File::open(p)?)?);
    }
    aggregate_runs(&records)
}

const LONG_HEADER: [&str; 7] = ["step", "metric", "mean", "sd", "ci_lo", "ci_hi", "algorithm"];

impl Summary {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.rows.is_empty() {
            w.write_record(["step", "metric", "mean", "sd", "ci_lo", "ci_hi", "algorithm", "n"])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
        Ok(Summary { rows })
    }

    pub fn get(&self, algorithm: &str, metric: &str, step: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.metric == metric && r.step == step)
    }
}

/// Writes `aggregate.csv` (one row per algorithm and step, every metric as
/// `_mean`/`_sd` columns) and the plot-ready `long.csv`.
pub fn emit_report(summary: &Summary, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)?;
    let long_path = out_dir.join("long.csv");
    let mut long = csv::Writer::from_path(&long_path)?;
    long.write_record(LONG_HEADER)?;
    for r in &summary.rows {
        long.write_record([
            r.step.to_string(),
            r.metric.clone(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.algorithm.clone(),
        ])?;
    }
    long.flush()?;

    let agg_path = out_dir.join("aggregate.csv");
    let mut agg = csv::Writer::from_path(&agg_path)?;
    let mut header = vec!["algorithm".to_string(), "step".to_string(), "n_seeds".to_string()];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sd"));
    }
    agg.write_record(&header)?;
    let mut by_key: BTreeMap<(&str, usize), Vec<&SummaryRow>> = BTreeMap::new();
    for r in &summary.rows {
        by_key.entry((&r.algorithm, r.step)).or_default().push(r);
    }
    for ((alg, step), rows) in by_key {
        let n = rows.iter().map(|r| r.n).max().unwrap_or(0);
        let mut record = vec![alg.to_string(), step.to_string(), n.to_string()];
        for m in METRICS {
            match rows.iter().find(|r| r.metric == m) {
                Some(r) => {
                    record.push(r.mean.to_string());
                    record.push(r.sd.to_string());
                }
                None => {
                    record.push(String::new());
                    record.push(String::new());
                }
            }
        }
        agg.write_record(&record)?;
    }
    agg.flush()?;
    Ok((agg_path, long_path))
}
