//! Simulated annotators, synthetic instances and evaluation metrics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Annotation, ItemId, ItemPool};
use crate::error::{Error, Result};
use crate::logistic::sigmoid;
use crate::models::{ranking_from_scores, Scorer};
use crate::rng::StreamRng;
use crate::samplers::PairSet;

/// Labels drawn from `P(c = 1) = σ(λ·θ_*ᵀz)`.
#[derive(Debug, Clone)]
pub struct LogisticAnnotator {
    pub theta_star: DVector<f64>,
    pub noise_scale: f64,
    rng: StreamRng,
}

impl LogisticAnnotator {
    pub fn new(theta_star: DVector<f64>, noise_scale: f64, rng: StreamRng) -> Result<Self> {
        if !(noise_scale > 0.0) {
            return Err(Error::Validation(format!("noise scale must be positive, got {noise_scale}")));
        }
        Ok(LogisticAnnotator {
            theta_star,
            noise_scale,
            rng,
        })
    }

    pub fn probability(&self, z: &DVector<f64>) -> f64 {
        sigmoid(self.noise_scale * self.theta_star.dot(z))
    }

    pub fn annotate(&mut self, z: &DVector<f64>) -> bool {
        let p = self.probability(z);
        self.rng.random::<f64>() < p
    }
}

/// Answers queries by consuming stored annotations, one per query.
#[derive(Debug, Clone, Default)]
pub struct ReplayAnnotator {
    // Labels oriented as (min, max).
    remaining: BTreeMap<(ItemId, ItemId), Vec<bool>>,
    total: usize,
}

impl ReplayAnnotator {
    pub fn new(annotations: &[Annotation]) -> Self {
        let mut remaining: BTreeMap<(ItemId, ItemId), Vec<bool>> = BTreeMap::new();
        for a in annotations {
            let a = if a.i < a.j { *a } else { a.flipped() };
            remaining.entry((a.i, a.j)).or_default().push(a.c);
        }
        ReplayAnnotator {
            remaining,
            total: annotations.len(),
        }
    }

    /// Annotations left across all pairs.
    pub fn remaining(&self) -> usize {
        self.total
    }

    pub fn remaining_for(&self, i: ItemId, j: ItemId) -> usize {
        self.remaining.get(&(i.min(j), i.max(j))).map_or(0, Vec::len)
    }

    pub fn is_exhausted(&self) -> bool {
        self.total == 0
    }

    /// Pairs with at least one annotation left.
    pub fn eligible(&self) -> PairSet {
        PairSet::Listed(self.remaining.keys().copied().collect())
    }

    /// Draws one stored label for `{i, j}` uniformly, removes it, and returns
    /// it oriented as "`i` beat `j`".
    pub fn annotate<R: Rng + ?Sized>(&mut self, i: ItemId, j: ItemId, rng: &mut R) -> Result<bool> {
        let key = (i.min(j), i.max(j));
        let labels = self.remaining.get_mut(&key).ok_or(Error::PairExhausted(i, j))?;
        let k = rng.random_range(0..labels.len());
        let c = labels.swap_remove(k);
        if labels.is_empty() {
            self.remaining.remove(&key);
        }
        self.total -= 1;
        Ok(if i < j { c } else { !c })
    }
}

/// Fraction of unordered pairs ordered differently by two rankings.
///
/// Both arguments list the same items, best first. Runs in `O(n log n)`.
pub fn kendall_tau_error(ranking: &[ItemId], truth: &[ItemId]) -> Result<f64> {
    let n = ranking.len();
    if n < 2 || truth.len() != n {
        return Err(Error::Validation(format!(
            "rankings must have equal length >= 2 (got {} and {})",
            n,
            truth.len()
        )));
    }
    let max_id = truth.iter().chain(ranking).copied().max().unwrap_or(0);
    let mut position = vec![usize::MAX; max_id + 1];
    for (p, &item) in truth.iter().enumerate() {
        if position[item] != usize::MAX {
            return Err(Error::Validation(format!("item {item} repeated in ranking")));
        }
        position[item] = p;
    }
    let mut seen = vec![false; n];
    let mut seq = Vec::with_capacity(n);
    for &item in ranking {
        let p = position[item];
        if p == usize::MAX || seen[p] {
            return Err(Error::Validation(format!("rankings are not over the same items (item {item})")));
        }
        seen[p] = true;
        seq.push(p);
    }
    let inversions = count_inversions(&mut seq);
    Ok(inversions as f64 / (n * (n - 1) / 2) as f64)
}

fn count_inversions(v: &mut [usize]) -> u64 {
    let mut buf = v.to_vec();
    merge_count(v, &mut buf)
}

fn merge_count(v: &mut [usize], buf: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut a, mut b, mut k) = (0, mid, 0);
    while a < mid && b < n {
        if v[a] <= v[b] {
            buf[k] = v[a];
            a += 1;
        } else {
            buf[k] = v[b];
            count += (mid - a) as u64;
            b += 1;
        }
        k += 1;
    }
    buf[k..k + mid - a].copy_from_slice(&v[a..mid]);
    k += mid - a;
    buf[k..k + n - b].copy_from_slice(&v[b..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// Ordering error of `scores` against ground-truth `truth` scores.
pub fn ordering_error(scores: &[f64], truth: &[f64]) -> Result<f64> {
    kendall_tau_error(&ranking_from_scores(scores), &ranking_from_scores(truth))
}

/// Hard decision "`i` ranks above `j`": score sign, ties to the smaller id.
pub fn decide(scores: &[f64], i: ItemId, j: ItemId) -> bool {
    let f = scores[i] - scores[j];
    if f == 0.0 {
        i < j
    } else {
        f > 0.0
    }
}

/// Disagreement rate between the model's hard decisions and stored labels.
pub fn holdout_error<M: Scorer + ?Sized>(model: &M, pool: &ItemPool, holdout: &[Annotation]) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::Validation("holdout set is empty".into()));
    }
    let scores = model.item_scores(pool);
    let mut wrong = 0usize;
    for a in holdout {
        pool.check_pair(a.i, a.j)?;
        if decide(&scores, a.i, a.j) != a.c {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / holdout.len() as f64)
}

/// `R_eval − R_train` for a model's induced rankings on two pools.
pub fn generalization_gap<M: Scorer + ?Sized>(
    model: &M,
    train: &ItemPool,
    eval: &ItemPool,
    train_truth: &[f64],
    eval_truth: &[f64],
) -> Result<f64> {
    let r_train = ordering_error(&model.item_scores(train), train_truth)?;
    let r_eval = ordering_error(&model.item_scores(eval), eval_truth)?;
    Ok(r_eval - r_train)
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    /// Features with `true_scores = Xθ_*` attached.
    pub pool: ItemPool,
    pub theta_star: DVector<f64>,
}

const MAX_TIE_REDRAWS: usize = 100;

/// Standard-normal features and `θ_* ~ U[−r, r]^d`, redrawing `θ_*` on exact
/// score ties.
pub fn generate_instance<R: Rng + ?Sized>(n: usize, d: usize, theta_range: f64, rng: &mut R) -> Result<SyntheticInstance> {
    if n < 2 || d == 0 || !(theta_range > 0.0) {
        return Err(Error::Validation(format!(
            "synthetic instance needs n >= 2, d >= 1, range > 0 (got {n}, {d}, {theta_range})"
        )));
    }
    let features = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    for _ in 0..MAX_TIE_REDRAWS {
        let theta_star = DVector::from_fn(d, |_, _| rng.random_range(-theta_range..=theta_range));
        let scores: Vec<f64> = (&features * &theta_star).iter().copied().collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[0] < w[1]) {
            let pool = ItemPool::new(features, Some(scores))?;
            return Ok(SyntheticInstance { pool, theta_star });
        }
    }
    Err(Error::Validation("could not draw a tie-free parameter".into()))
}

/// `count` annotations on uniformly drawn pairs, labelled by a logistic annotator.
pub fn synthetic_annotations<R: Rng + ?Sized>(
    pool: &ItemPool,
    annotator: &mut LogisticAnnotator,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Annotation>> {
    let pairs = PairSet::all(pool.len());
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, j) = pairs.uniform(rng).ok_or(Error::Exhausted)?;
        let c = annotator.annotate(&pool.diff_vector(i, j)?);
        out.push(Annotation { i, j, c });
    }
    Ok(out)
}
