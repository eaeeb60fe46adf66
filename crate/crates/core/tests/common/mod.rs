//! Invariant checks shared by the property tests and the acceptance run.
//! Each check draws its inputs from `seed` and returns a description of the
//! first violation it finds.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankwise::bounds::{
    bound_from_terms, concentration_terms_normalized, ordering_error_bound, BoundConstants, MarginSpec,
};
use rankwise::data::{Annotation, ComparisonHistory, ComparisonPool, ItemPool};
use rankwise::harness::{run_all, run_seed, ExperimentConfig, Scenario};
use rankwise::info_matrix::InfoMatrix;
use rankwise::learner::ModelKind;
use rankwise::logistic::sigmoid;
use rankwise::models::{
    fit_hybrid, fit_map, fit_mle, predict_prob, ranking_from_scores, HybridModel, LinearModel, Scorer,
    TrueSkillState,
};
use rankwise::samplers::{
    argmax_pair, bald_select, guro_criterion, guro_select, normmin_select, trueskill_select, uniform_select,
    BaldExponent, PairPosterior, PairSet, SamplerKind,
};
use rankwise::sim::{kendall_tau_error, ReplayAnnotator};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pool(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ItemPool {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    ItemPool::from_rows(&rows, None).unwrap()
}

/// `len` comparisons with labels drawn from a logistic model on `theta`.
pub fn random_history(rng: &mut ChaCha8Rng, pool: &ItemPool, theta: &DVector<f64>, len: usize) -> ComparisonHistory {
    let n = pool.len();
    let mut h = ComparisonHistory::new();
    for _ in 0..len {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let p = sigmoid(theta.dot(&pool.diff_vector(i, j).unwrap()));
        h.push(i, j, rng.random::<f64>() < p).unwrap();
    }
    h
}

pub fn random_vector(rng: &mut ChaCha8Rng, d: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-r..r))
}

pub fn ensure(ok: bool, what: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Item pools survive a CSV round trip unchanged.
pub fn pool_round_trip(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..15);
    let d = r.random_range(1..6);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1e3..1e3)).collect()).collect();
    let scores: Option<Vec<f64>> = r.random_bool(0.5).then(|| (0..n).map(|_| r.random::<f64>()).collect());
    let pool = ItemPool::from_rows(&rows, scores).unwrap();
    let mut buf = Vec::new();
    pool.write_csv(&mut buf).map_err(|e| e.to_string())?;
    let back = ItemPool::read_csv_from(buf.as_slice(), "mem").map_err(|e| e.to_string())?;
    ensure(back == pool, || "pool changed across a CSV round trip".into())
}

pub fn diff_antisymmetric(seed: u64) -> Check {
    let mut r = rng(seed);
    let pool = random_pool(&mut r, 8, 4);
    for i in 0..8 {
        for j in 0..8 {
            if i != j {
                let s = pool.diff_vector(i, j).unwrap() + pool.diff_vector(j, i).unwrap();
                ensure(s.iter().all(|v| *v == 0.0), || format!("z({i},{j}) + z({j},{i}) != 0"))?;
            }
        }
    }
    Ok(())
}

/// Replay and holdout partition the input multiset.
pub fn split_partitions(seed: u64) -> Check {
    let mut r = rng(seed);
    let anns: Vec<Annotation> = (0..r.random_range(1..200))
        .map(|_| Annotation {
            i: r.random_range(0..5),
            j: r.random_range(5..10),
            c: r.random(),
        })
        .collect();
    let frac = r.random_range(0.0..1.0);
    let split = ComparisonPool::split(anns.clone(), frac, &mut r).map_err(|e| e.to_string())?;
    let count = |v: &[Annotation]| {
        let mut m = BTreeMap::new();
        for a in v {
            *m.entry((a.i, a.j, a.c)).or_insert(0usize) += 1;
        }
        m
    };
    let mut joined = split.replay.clone();
    joined.extend_from_slice(&split.holdout);
    ensure(count(&joined) == count(&anns), || "split is not a partition of the input".into())
}

/// Incremental inverse against direct inversion after every update, with
/// refreshes disabled.
pub fn sherman_morrison_accuracy(seed: u64, d: usize, updates: usize) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut info = InfoMatrix::prior(d, 1.0).unwrap().with_refresh_interval(None);
    let mut worst: f64 = 0.0;
    for k in 0..updates {
        let z = random_vector(&mut r, d, 3.0);
        let w = r.random_range(0.0..0.25);
        info.sherman_morrison_update(&z, w);
        if k % 50 == 49 || k + 1 == updates {
            let direct = info.h().clone().try_inverse().ok_or("H not invertible")?;
            worst = worst.max(rel_frobenius(info.hinv(), &direct));
        }
    }
    ensure(info.refreshes() == 0, || "refresh ran while disabled".into())?;
    Ok(worst)
}

pub fn weighted_norm_monotone(seed: u64) -> Check {
    let mut r = rng(seed);
    let d = 5;
    let mut info = InfoMatrix::prior(d, 1.0).unwrap();
    let probe = random_vector(&mut r, d, 1.0);
    let mut last = info.weighted_norm_sq(&probe);
    for _ in 0..200 {
        let z = random_vector(&mut r, d, 2.0);
        info.sherman_morrison_update(&z, r.random_range(0.0..0.25));
        let now = info.weighted_norm_sq(&probe);
        ensure(now <= last * (1.0 + 1e-12), || format!("norm grew {last} -> {now}"))?;
        last = now;
        let h = info.h();
        ensure(h == &h.transpose(), || "H lost exact symmetry".into())?;
    }
    Ok(())
}

pub fn probabilities_complement(seed: u64) -> Check {
    let mut r = rng(seed);
    let pool = random_pool(&mut r, 6, 3);
    let linear = LinearModel {
        theta: random_vector(&mut r, 3, 30.0),
        reg: 1.0,
        converged: true,
    };
    let mut hybrid = HybridModel::zeros(3, 6, 1.0, 1.0);
    hybrid.theta = random_vector(&mut r, 3, 30.0);
    hybrid.zeta = random_vector(&mut r, 6, 10.0);
    let mut ts = TrueSkillState::new(6);
    for _ in 0..20 {
        let (i, j) = (r.random_range(0..3), r.random_range(3..6));
        ts.update(i, j, r.random()).unwrap();
    }
    for i in 0..6 {
        for j in 0..6 {
            if i == j {
                continue;
            }
            let a = predict_prob(&linear, &pool, i, j).unwrap() + predict_prob(&linear, &pool, j, i).unwrap();
            let b = predict_prob(&hybrid, &pool, i, j).unwrap() + predict_prob(&hybrid, &pool, j, i).unwrap();
            let c = ts.win_probability(i, j) + ts.win_probability(j, i);
            ensure(a == 1.0 && b == 1.0 && c == 1.0, || format!("({i},{j}): sums {a}, {b}, {c}"))?;
        }
    }
    Ok(())
}

pub fn mle_order_invariant(seed: u64) -> Check {
    let mut r = rng(seed);
    let pool = random_pool(&mut r, 10, 3);
    let theta = random_vector(&mut r, 3, 2.0);
    let h = random_history(&mut r, &pool, &theta, 60);
    let mut triples: Vec<_> = h.records().iter().map(|x| (x.i, x.j, x.c)).collect();
    triples.shuffle(&mut r);
    let shuffled = ComparisonHistory::from_triples(triples).unwrap();
    let a = fit_mle(&h, &pool, 1.0).map_err(|e| e.to_string())?;
    let b = fit_mle(&shuffled, &pool, 1.0).map_err(|e| e.to_string())?;
    let gap = (&a.theta - &b.theta).amax();
    ensure(gap <= 1e-8, || format!("order changed theta by {gap:e}"))
}

/// Max coordinate gap between MAP (zero mean, identity precision) and the
/// reg = 1 MLE.
pub fn map_mle_gap(seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let d = r.random_range(1..6);
    let pool = random_pool(&mut r, 12, d);
    let theta = random_vector(&mut r, d, 2.0);
    let len = r.random_range(0..80);
    let h = random_history(&mut r, &pool, &theta, len);
    let mle = fit_mle(&h, &pool, 1.0).map_err(|e| e.to_string())?;
    let map = fit_map(&h, &pool, &DVector::zeros(d), &DMatrix::identity(d, d)).map_err(|e| e.to_string())?;
    Ok((&mle.theta - &map.theta_map).amax())
}

/// Per-item Bradley–Terry fit with ridge `reg` on the offsets, by plain
/// Newton on the full item Hessian. Independent of the library's optimizer.
pub fn per_item_fit(history: &ComparisonHistory, n: usize, reg: f64) -> Vec<f64> {
    let mut zeta = DVector::<f64>::zeros(n);
    for _ in 0..200 {
        let mut grad = -&zeta * reg;
        let mut hess = DMatrix::<f64>::identity(n, n) * reg;
        for rec in history.records() {
            let p = sigmoid(zeta[rec.i] - zeta[rec.j]);
            let y = if rec.c { 1.0 } else { 0.0 };
            grad[rec.i] += y - p;
            grad[rec.j] -= y - p;
            let w = p * (1.0 - p);
            hess[(rec.i, rec.i)] += w;
            hess[(rec.j, rec.j)] += w;
            hess[(rec.i, rec.j)] -= w;
            hess[(rec.j, rec.i)] -= w;
        }
        if grad.amax() < 1e-12 {
            break;
        }
        zeta += hess.cholesky().expect("ridge keeps the Hessian definite").solve(&grad);
    }
    zeta.iter().copied().collect()
}

/// Hybrid model on all-zero features ranks items as the per-item fit does.
pub fn hybrid_zero_features_match(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(4..12);
    let d = r.random_range(1..4);
    let pool = ItemPool::from_rows(&vec![vec![0.0; d]; n], None).unwrap();
    let truth: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let mut h = ComparisonHistory::new();
    for _ in 0..(30 * n) {
        let i = r.random_range(0..n);
        let j = (i + r.random_range(1..n)) % n;
        h.push(i, j, r.random::<f64>() < sigmoid(truth[i] - truth[j])).unwrap();
    }
    let hybrid = fit_hybrid(&h, &pool, 1.0, 1.0).map_err(|e| e.to_string())?;
    let a = ranking_from_scores(&hybrid.item_scores(&pool));
    let b = ranking_from_scores(&per_item_fit(&h, n, 1.0));
    ensure(a == b, || format!("hybrid {a:?} vs per-item {b:?}"))
}

pub fn trueskill_variance_positive(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut ts = TrueSkillState::new(5);
    ts.mu = (0..5).map(|_| r.random_range(-500.0..500.0)).collect();
    for _ in 0..2000 {
        let i = r.random_range(0..5);
        let j = (i + r.random_range(1..5)) % 5;
        ts.update(i, j, r.random()).unwrap();
        ensure(ts.sigma2.iter().all(|v| *v > 0.0 && v.is_finite()), || format!("sigma2 {:?}", ts.sigma2))?;
    }
    Ok(())
}

/// Selectors return eligible pairs with `i < j`, and the deterministic ones
/// repeat themselves without a state change.
pub fn selectors_well_formed(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..9);
    let pool = random_pool(&mut r, n, 3);
    let theta = random_vector(&mut r, 3, 2.0);
    let post = PairPosterior::contextual(&pool, &theta, &DMatrix::identity(3, 3));
    let mut pairs: Vec<(usize, usize)> = PairSet::all(n).iter().filter(|_| r.random_bool(0.6)).collect();
    if pairs.is_empty() {
        pairs.push((0, 1));
    }
    let set = PairSet::listed(pairs);
    let mut ts = TrueSkillState::new(n);
    ts.mu = (0..n).map(|_| r.random_range(20.0..30.0)).collect();
    let picks = [
        guro_select(&post, &set),
        normmin_select(&post, &set),
        bald_select(&post, &set, BaldExponent::Final),
        trueskill_select(&ts, &set),
        uniform_select(&set, &mut r),
    ];
    for p in picks {
        let (i, j) = p.map_err(|e| e.to_string())?;
        ensure(i < j && set.contains(i, j), || format!("({i},{j}) not eligible"))?;
    }
    ensure(guro_select(&post, &set).unwrap() == guro_select(&post, &set).unwrap(), || "guro not pure".into())?;
    ensure(normmin_select(&post, &set).unwrap() == normmin_select(&post, &set).unwrap(), || "normmin not pure".into())?;
    let empty = PairSet::listed(Vec::new());
    ensure(guro_select(&post, &empty).is_err(), || "empty set did not report exhaustion".into())
}

pub fn argmax_scale_invariant(seed: u64) -> Check {
    let mut r = rng(seed);
    let pool = random_pool(&mut r, 7, 2);
    let theta = random_vector(&mut r, 2, 2.0);
    let post = PairPosterior::contextual(&pool, &theta, &DMatrix::identity(2, 2));
    let scale = r.random_range(1e-3..1e3);
    let set = PairSet::all(7);
    let base = argmax_pair(&set, |i, j| guro_criterion(post.mean_diff(i, j), post.var_diff(i, j))).unwrap();
    let scaled =
        argmax_pair(&set, |i, j| scale * guro_criterion(post.mean_diff(i, j), post.var_diff(i, j))).unwrap();
    ensure(base == scaled, || format!("scale {scale} moved the argmax"))
}

/// Concentration terms lie in (0, 1], fall as T grows, and fall when the
/// GURO quantity shrinks; the bound lies in [0, 1] and is monotone in ε.
pub fn bound_properties(seed: u64) -> Check {
    let mut r = rng(seed);
    let (s, q, l0) = (r.random_range(0.1..2.0), r.random_range(0.1..2.0), r.random_range(0.05..1.0));
    let consts = BoundConstants::new(s, q, l0, 3).map_err(|e| e.to_string())?;
    let slope = r.random_range(0.1..0.25);
    let norm_sq = r.random_range(0.5..2.0);
    let delta = r.random_range(0.01..0.2);
    let mut last = (f64::INFINITY, f64::INFINITY);
    let mut checked = 0;
    for t in [1usize, 10, 100, 1_000, 10_000, 100_000] {
        let (a, b) = concentration_terms_normalized(slope, norm_sq, delta, t, &consts);
        // Past this point exp() underflows and strict decrease is not representable.
        if a < f64::MIN_POSITIVE || b < f64::MIN_POSITIVE {
            break;
        }
        ensure(a <= 1.0 && b <= 1.0, || format!("T={t}: ({a}, {b})"))?;
        ensure(a < last.0 && b < last.1, || format!("T={t}: not decreasing"))?;
        last = (a, b);
        checked += 1;
        let (a_small, _) = concentration_terms_normalized(slope * 0.5, norm_sq, delta, t, &consts);
        ensure(a_small <= a, || "smaller slope raised alpha".into())?;
    }
    ensure(checked >= 3, || format!("only {checked} horizons before underflow"))?;
    let pool = random_pool(&mut r, 6, 3);
    let theta = random_vector(&mut r, 3, 2.0);
    let mut info = InfoMatrix::prior(3, 1.0).unwrap();
    for _ in 0..400 {
        let (i, j) = (r.random_range(0..3), r.random_range(3..6));
        info.sherman_morrison_update(&pool.diff_vector(i, j).unwrap(), 0.2);
    }
    let margins = MarginSpec::uniform(0.05).map_err(|e| e.to_string())?;
    let mut prev = f64::INFINITY;
    for eps in [0.05, 0.1, 0.2, 0.4, 0.8] {
        let rep = ordering_error_bound(&pool, &theta, info.hinv(), 400, eps, &consts, &margins)
            .map_err(|e| e.to_string())?;
        ensure((0.0..=1.0).contains(&rep.value), || format!("bound {} outside [0,1]", rep.value))?;
        ensure(rep.value <= prev, || format!("bound rose with eps at {eps}"))?;
        prev = rep.value;
    }
    let tight = bound_from_terms(1e-9, 1e-9, 3, 400, 0.2, 6);
    let loose = bound_from_terms(1e-6, 1e-6, 3, 400, 0.2, 6);
    ensure(tight.value <= loose.value, || "smaller terms gave a larger bound".into())
}

/// Symmetric in its arguments and invariant under a shared relabeling.
pub fn kendall_symmetric_relabel(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..30);
    let mut a: Vec<usize> = (0..n).collect();
    let mut b = a.clone();
    a.shuffle(&mut r);
    b.shuffle(&mut r);
    let mut relabel: Vec<usize> = (0..n).collect();
    relabel.shuffle(&mut r);
    let ab = kendall_tau_error(&a, &b).unwrap();
    let ba = kendall_tau_error(&b, &a).unwrap();
    let ra: Vec<usize> = a.iter().map(|&x| relabel[x]).collect();
    let rb: Vec<usize> = b.iter().map(|&x| relabel[x]).collect();
    let rr = kendall_tau_error(&ra, &rb).unwrap();
    ensure(ab == ba && ab == rr, || format!("{ab} {ba} {rr}"))
}

/// Every stored annotation comes back exactly once.
pub fn replay_exactly_once(seed: u64) -> Check {
    let mut r = rng(seed);
    let anns: Vec<Annotation> = (0..r.random_range(1..80))
        .map(|_| {
            let i = r.random_range(0..6);
            Annotation {
                i,
                j: (i + r.random_range(1..6)) % 6,
                c: r.random(),
            }
        })
        .collect();
    let mut replay = ReplayAnnotator::new(&anns);
    let mut wins: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for a in &anns {
        let key = (a.i.min(a.j), a.i.max(a.j));
        let e = wins.entry(key).or_default();
        if (a.i < a.j) == a.c {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let mut got: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    while !replay.is_exhausted() {
        let (i, j) = replay.eligible().uniform(&mut r).unwrap();
        let c = replay.annotate(i, j, &mut r).map_err(|e| e.to_string())?;
        let e = got.entry((i, j)).or_default();
        if c {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    ensure(got == wins, || "replayed outcomes differ from the stored ones".into())
}

fn small_config(sampler: SamplerKind, scenario: Scenario) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        scenario,
        budget: 60,
        seeds: vec![0, 1, 2],
        n_items: 12,
        dim: 3,
        initial_items: 6,
        add_at: 30,
        synthetic_annotations: 300,
        bound_eps: Some(0.2),
        ..ExperimentConfig::default()
    };
    cfg.sampler.kind = sampler;
    cfg.model = Some(ModelKind::default_for(sampler));
    if scenario != Scenario::SyntheticLogistic || sampler == SamplerKind::TrueSkill {
        cfg.bound_eps = None;
    }
    cfg
}

/// Same config and seed give identical records; parallel equals serial.
pub fn deterministic_runs(sampler: SamplerKind, scenario: Scenario) -> Check {
    let cfg = small_config(sampler, scenario);
    let a = run_all(&cfg).map_err(|e| e.to_string())?;
    let b = run_all(&cfg).map_err(|e| e.to_string())?;
    for (k, (x, y)) in a.iter().zip(&b).enumerate() {
        ensure(x.records == y.records, || format!("seed {k}: repeated run differs"))?;
        let serial = run_seed(&cfg, cfg.seeds[k]).map_err(|e| e.to_string())?;
        ensure(serial.records == x.records, || format!("seed {k}: serial differs from parallel"))?;
    }
    Ok(())
}
