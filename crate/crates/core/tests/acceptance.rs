//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass substrings as arguments to run a subset.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankwise::harness::{run_all, ExperimentConfig, Scenario, TrajectoryRecord};
use rankwise::info_matrix::InfoMatrix;
use rankwise::logistic::log_sigmoid;
use rankwise::models::{fit_map, HybridModel, LinearModel};
use rankwise::samplers::{bayes_guro_select, guro_select, PairPosterior, PairSet, PosteriorScoreSampler, SamplerKind};
use rankwise::sim::kendall_tau_error;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use common::{random_history, random_pool, random_vector, rng};

struct Suite {
    filters: Vec<String>,
    failed: Vec<String>,
    ran: usize,
}

impl Suite {
    fn wants(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| name.contains(f.as_str()))
    }

    fn report(&mut self, name: &str, ok: bool, detail: String) {
        self.ran += 1;
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

const CONTEXTUAL: [SamplerKind; 6] = [
    SamplerKind::Guro,
    SamplerKind::BayesGuro,
    SamplerKind::Bald,
    SamplerKind::NormMin,
    SamplerKind::Uniform,
    SamplerKind::CoLstim,
];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One-sided paired t-test of `mean(a - b) < 0`.
fn paired_less_p(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diff.len() as f64;
    let m = mean(&diff);
    let var = diff.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if m < 0.0 { 0.0 } else { 1.0 };
    }
    let t = m / (var / n).sqrt();
    StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t)
}

/// Mann–Kendall test for a downward trend; returns `(S, one-sided p)`.
fn mann_kendall_down(v: &[f64]) -> (i64, f64) {
    let n = v.len();
    let mut s = 0i64;
    for a in 0..n {
        for b in a + 1..n {
            s += match v[b].partial_cmp(&v[a]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if s < 0 { (s as f64 + 1.0) / var.sqrt() } else if s > 0 { (s as f64 - 1.0) / var.sqrt() } else { 0.0 };
    (s, Normal::standard().cdf(z))
}

fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(mean).collect()
}

/// Seed-averaged metric per evaluated step, in step order.
fn seed_mean(records: &[TrajectoryRecord], metric: impl Fn(&TrajectoryRecord) -> Option<f64>) -> Vec<f64> {
    let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(v) = metric(r) {
            by_step.entry(r.step).or_default().push(v);
        }
    }
    by_step.values().map(|v| mean(v)).collect()
}

fn final_values(records: &[TrajectoryRecord], budget: usize) -> Vec<f64> {
    let mut v: Vec<(u64, f64)> =
        records.iter().filter(|r| r.step == budget).map(|r| (r.seed, r.ordering_error.unwrap())).collect();
    v.sort_by_key(|x| x.0);
    v.into_iter().map(|x| x.1).collect()
}

fn block_means(v: &[f64], blocks: usize) -> Vec<f64> {
    let size = v.len() / blocks;
    (0..blocks).map(|k| mean(&v[k * size..(k + 1) * size])).collect()
}

/// Downward trend: significant Mann–Kendall statistic and strictly
/// decreasing means over ten consecutive blocks of the horizon.
fn decreasing_trend(curve: &[f64]) -> (bool, String) {
    let (s, p) = mann_kendall_down(curve);
    let blocks = block_means(curve, 10);
    let strictly = blocks.windows(2).all(|w| w[1] < w[0]);
    (
        p < 0.05 && strictly,
        format!("{:.4} -> {:.4}, Mann-Kendall S={s} p={p:.1e}, block means decreasing: {strictly}", curve[0], curve[curve.len() - 1]),
    )
}

fn run(cfg: &ExperimentConfig) -> (Vec<TrajectoryRecord>, f64) {
    let start = Instant::now();
    let runs = run_all(cfg).expect("experiment runs");
    (runs.into_iter().flat_map(|r| r.records).collect(), start.elapsed().as_secs_f64())
}

fn synthetic_bound_tracking(suite: &mut Suite) {
    let base = ExperimentConfig {
        scenario: Scenario::SyntheticLogistic,
        budget: 2000,
        seeds: (0..50).collect(),
        eval_stride: 10,
        refit_stride: 10,
        n_items: 100,
        dim: 10,
        theta_range: 3.0,
        noise: 0.5,
        ..ExperimentConfig::default()
    };
    let mut results = BTreeMap::new();
    let mut slowest = (0.0, "");
    for kind in SamplerKind::ALL {
        let mut cfg = base.clone();
        cfg.sampler.kind = kind;
        cfg.bound_eps = (kind != SamplerKind::TrueSkill).then_some(0.2);
        let (records, secs) = run(&cfg);
        eprintln!("  synthetic {kind}: {secs:.0}s");
        if secs > slowest.0 {
            slowest = (secs, kind.name());
        }
        results.insert(kind.name(), records);
    }

    for kind in SamplerKind::ALL {
        let curve = seed_mean(&results[kind.name()], |r| r.ordering_error);
        let (ok, detail) = decreasing_trend(&curve);
        suite.report(&format!("synthetic (i) mean ordering error decreasing [{kind}]"), ok, detail);
    }

    let guro = final_values(&results["guro"], 2000);
    let uniform = final_values(&results["uniform"], 2000);
    let p = paired_less_p(&guro, &uniform);
    suite.report(
        "synthetic (ii) GURO <= Uniform at T=2000",
        mean(&guro) <= mean(&uniform) && p < 0.05,
        format!("means {:.5} vs {:.5}, paired one-sided p={p:.1e} over {} seeds", mean(&guro), mean(&uniform), guro.len()),
    );

    let mut notes = Vec::new();
    let mut ok = true;
    for kind in CONTEXTUAL {
        let curve = seed_mean(&results[kind.name()], |r| r.bound);
        match curve.iter().position(|v| *v < 1.0) {
            None => notes.push(format!("{kind} vacuous throughout")),
            Some(k) => {
                let mono = curve[k..].windows(2).all(|w| w[1] <= w[0]);
                ok &= mono;
                notes.push(format!("{kind} non-vacuous from record {k}, nonincreasing: {mono}"));
            }
        }
    }
    suite.report("synthetic (iii) bound at eps=0.2 nonincreasing once non-vacuous", ok, notes.join("; "));
    let g = seed_mean(&results["guro"], |r| r.bound);
    let u = seed_mean(&results["uniform"], |r| r.bound);
    let (g, u) = (g[g.len() - 1], u[u.len() - 1]);
    suite.report("synthetic (iii) GURO bound <= Uniform bound at T=2000", g <= u, format!("{g:.6} vs {u:.6}"));
    suite.report(
        "synthetic runtime under 15 min per strategy",
        slowest.0 < 900.0,
        format!("slowest {} at {:.0}s for 50 seeds", slowest.1, slowest.0),
    );
}

fn wide_surrogate(suite: &mut Suite) {
    let base = ExperimentConfig {
        scenario: Scenario::SyntheticLogistic,
        budget: 2000,
        seeds: (0..20).collect(),
        eval_stride: 100,
        refit_stride: 10,
        n_items: 200,
        dim: 35,
        theta_range: 3.0,
        noise: 0.1,
        ..ExperimentConfig::default()
    };
    let mut finals = BTreeMap::new();
    for kind in [SamplerKind::Guro, SamplerKind::BayesGuro, SamplerKind::Uniform, SamplerKind::NormMin] {
        let mut cfg = base.clone();
        cfg.sampler.kind = kind;
        let (records, secs) = run(&cfg);
        eprintln!("  surrogate {kind}: {secs:.0}s");
        finals.insert(kind.name(), final_values(&records, 2000));
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for a in ["guro", "bayes-guro"] {
        for b in ["uniform", "normmin"] {
            let p = paired_less_p(&finals[a], &finals[b]);
            ok &= p < 0.05 && mean(&finals[a]) < mean(&finals[b]);
            notes.push(format!("{a} {:.4} < {b} {:.4} p={p:.1e}", mean(&finals[a]), mean(&finals[b])));
        }
    }
    suite.report("surrogate GURO and BayesGURO beat Uniform and NormMin", ok, notes.join("; "));
}

fn replay_pool(suite: &mut Suite) {
    let base = ExperimentConfig {
        scenario: Scenario::ReplayPool,
        budget: 2000,
        seeds: (0..20).collect(),
        eval_stride: 10,
        refit_stride: 10,
        n_items: 100,
        dim: 10,
        synthetic_annotations: 5000,
        holdout_fraction: 0.1,
        ..ExperimentConfig::default()
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for kind in SamplerKind::ALL {
        let mut cfg = base.clone();
        cfg.sampler.kind = kind;
        let (records, _) = run(&cfg);
        let smooth = moving_average(&seed_mean(&records, |r| r.holdout_error), 5);
        let (s, p) = mann_kendall_down(&smooth);
        let good = p < 0.05 && smooth[smooth.len() - 1] <= smooth[0];
        ok &= good;
        notes.push(format!("{kind} {:.4}->{:.4} S={s} p={p:.0e}", smooth[0], smooth[smooth.len() - 1]));
    }
    suite.report("replay holdout error nonincreasing in trend (5-point moving average)", ok, notes.join("; "));

    let failures: Vec<u64> = (0..50).filter(|&s| common::hybrid_zero_features_match(s).is_err()).collect();
    suite.report(
        "hybrid with zero features ranks as a per-item fit",
        failures.is_empty(),
        format!("50 random pools, mismatches at seeds {failures:?}"),
    );
}

fn sherman_morrison(suite: &mut Suite) {
    let worst = (0..10)
        .map(|s| common::sherman_morrison_accuracy(s, 10, 1000).expect("invertible"))
        .fold(0.0, f64::max);
    suite.report(
        "Sherman-Morrison inverse vs direct inverse",
        worst < 1e-6,
        format!("worst relative Frobenius error {worst:.2e} over 10 runs of 1000 updates at d=10"),
    );
}

fn central_difference(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| {
        let h = 1e-5 * x[k].abs().max(1.0);
        let (mut up, mut down) = (x.clone(), x.clone());
        up[k] += h;
        down[k] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn gradients(suite: &mut Suite) {
    let mut worst: f64 = 0.0;
    for point in 0..20u64 {
        let mut r = rng(1000 + point);
        let (n, d) = (10, 4);
        let pool = random_pool(&mut r, n, d);
        let truth = random_vector(&mut r, d, 2.0);
        let history = random_history(&mut r, &pool, &truth, 50);

        let linear = LinearModel {
            theta: random_vector(&mut r, d, 2.0),
            reg: r.random_range(0.1..2.0),
            converged: false,
        };
        let g = linear.loglik_grad(&history, &pool).unwrap();
        let fd = central_difference(
            |t| LinearModel { theta: t.clone(), ..linear.clone() }.loglik(&history, &pool).unwrap(),
            &linear.theta,
        );
        worst = worst.max(rel_err(&g, &fd));

        let mut hybrid = HybridModel::zeros(d, n, r.random_range(0.1..2.0), r.random_range(0.1..2.0));
        hybrid.theta = random_vector(&mut r, d, 2.0);
        hybrid.zeta = random_vector(&mut r, n, 1.0);
        let stacked = DVector::from_iterator(d + n, hybrid.theta.iter().chain(hybrid.zeta.iter()).copied());
        let g = hybrid.loglik_grad(&history, &pool).unwrap();
        let fd = central_difference(
            |x| {
                let mut m = hybrid.clone();
                m.theta = x.rows(0, d).into_owned();
                m.zeta = x.rows(d, n).into_owned();
                m.loglik(&history, &pool).unwrap()
            },
            &stacked,
        );
        worst = worst.max(rel_err(&g, &fd));

        let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        let precision = &a * a.transpose() + DMatrix::identity(d, d);
        let prior_mean = random_vector(&mut r, d, 1.0);
        let mut bayes = fit_map(&history, &pool, &prior_mean, &precision).unwrap();
        bayes.theta_map = random_vector(&mut r, d, 2.0);
        let g = bayes.log_posterior_grad(&history, &pool).unwrap();
        let log_post = |t: &DVector<f64>| {
            let lik: f64 = history
                .records()
                .iter()
                .map(|rec| {
                    let f = t.dot(&pool.diff_vector(rec.i, rec.j).unwrap());
                    log_sigmoid(if rec.c { f } else { -f })
                })
                .sum();
            let e = t - &prior_mean;
            lik - 0.5 * e.dot(&(&precision * &e))
        };
        worst = worst.max(rel_err(&g, &central_difference(log_post, &bayes.theta_map)));
    }
    suite.report(
        "analytic gradients vs central differences",
        worst < 1e-4,
        format!("worst relative error {worst:.2e} at 20 points (linear, hybrid, Bayes)"),
    );
}

/// Pairs ordered differently, by direct enumeration.
fn brute_kendall(ranking: &[usize], truth: &[usize]) -> f64 {
    let n = ranking.len();
    let pos = |order: &[usize], x: usize| order.iter().position(|&y| y == x).unwrap();
    let mut discordant = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            if (pos(ranking, a) < pos(ranking, b)) != (pos(truth, a) < pos(truth, b)) {
                discordant += 1;
            }
        }
    }
    discordant as f64 / (n * (n - 1) / 2) as f64
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn kendall(suite: &mut Suite) {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for n in 2..=8 {
        let identity: Vec<usize> = (0..n).collect();
        let mut other = identity.clone();
        other.reverse();
        other.swap(0, n / 2);
        for truth in [&identity, &other] {
            let mut perm = identity.clone();
            loop {
                checked += 1;
                if kendall_tau_error(&perm, truth).unwrap() != brute_kendall(&perm, truth) {
                    mismatches += 1;
                }
                if !next_permutation(&mut perm) {
                    break;
                }
            }
        }
    }
    suite.report(
        "Kendall error vs brute-force pair count",
        mismatches == 0,
        format!("{checked} permutation pairs for n=2..8, {mismatches} mismatches"),
    );
}

fn taylor(suite: &mut Suite) {
    let mut agree = 0;
    let mut notes = Vec::new();
    for inst in 0..10u64 {
        let mut r = rng(2000 + inst);
        let d = 3;
        let pool = random_pool(&mut r, 10, d);
        let theta = random_vector(&mut r, d, 1.0);
        let mut info = InfoMatrix::prior(d, 1.0).unwrap();
        for _ in 0..20 {
            let (i, j) = (r.random_range(0..5), r.random_range(5..10));
            info.sherman_morrison_update(&pool.diff_vector(i, j).unwrap(), 0.2);
        }
        let cov = info.hinv() * 1e-4;
        let all = PairSet::all(10);
        let guro = guro_select(&PairPosterior::contextual(&pool, &theta, &cov), &all).unwrap();
        let sampler = PosteriorScoreSampler::contextual(&pool, &theta, &cov).unwrap();
        let bayes = bayes_guro_select(&sampler, &all, 100_000, &mut ChaCha8Rng::seed_from_u64(inst)).unwrap();
        if bayes == guro {
            agree += 1;
        } else {
            notes.push(format!("instance {inst}: {bayes:?} vs {guro:?}"));
        }
    }
    suite.report(
        "BayesGURO matches GURO at covariance x1e-4 with 1e5 draws",
        agree == 10,
        format!("{agree}/10 instances agree {}", notes.join("; ")),
    );
}

fn map_mle(suite: &mut Suite) {
    let worst = (0..20).map(|s| common::map_mle_gap(s).unwrap()).fold(0.0, f64::max);
    suite.report(
        "identity-prior MAP equals reg=1 MLE",
        worst <= 1e-8,
        format!("worst coordinate gap {worst:.1e} over 20 histories"),
    );
}

fn invariants(suite: &mut Suite) {
    type Named = (&'static str, fn(u64) -> common::Check);
    let checks: [Named; 14] = [
        ("pool CSV round trip", common::pool_round_trip),
        ("diff antisymmetry", common::diff_antisymmetric),
        ("replay/holdout partition", common::split_partitions),
        ("weighted norm monotone, H symmetric", common::weighted_norm_monotone),
        ("pair probabilities sum to 1", common::probabilities_complement),
        ("MLE history-order invariance", common::mle_order_invariant),
        ("hybrid zero features", common::hybrid_zero_features_match),
        ("TrueSkill variance positive", common::trueskill_variance_positive),
        ("selectors eligible and pure", common::selectors_well_formed),
        ("argmax rescaling invariance", common::argmax_scale_invariant),
        ("bound terms and bound monotone", common::bound_properties),
        ("Kendall symmetry and relabeling", common::kendall_symmetric_relabel),
        ("replay returns each annotation once", common::replay_exactly_once),
        ("MAP/MLE gap", |s| {
            let gap = common::map_mle_gap(s)?;
            common::ensure(gap <= 1e-8, || format!("gap {gap:e}"))
        }),
    ];
    let mut failures = Vec::new();
    for (name, check) in checks {
        for seed in 0..32 {
            if let Err(e) = check(seed) {
                failures.push(format!("{name} (seed {seed}): {e}"));
                break;
            }
        }
    }
    suite.report(
        "module invariants",
        failures.is_empty(),
        if failures.is_empty() { format!("{} checks x 32 seeds", checks.len()) } else { failures.join("; ") },
    );

    let mut failures = Vec::new();
    for scenario in Scenario::ALL {
        for kind in SamplerKind::ALL {
            if let Err(e) = common::deterministic_runs(kind, scenario) {
                failures.push(format!("{kind} {}: {e}", scenario.name()));
            }
        }
    }
    suite.report(
        "determinism (repeat and parallel runs bitwise identical)",
        failures.is_empty(),
        if failures.is_empty() { "all scenarios x all samplers".into() } else { failures.join("; ") },
    );
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut suite = Suite {
        filters,
        failed: Vec::new(),
        ran: 0,
    };
    let groups: [(&str, fn(&mut Suite)); 9] = [
        ("oracles-sm", sherman_morrison),
        ("oracles-gradient", gradients),
        ("oracles-kendall", kendall),
        ("map-mle", map_mle),
        ("taylor", taylor),
        ("invariants", invariants),
        ("replay", replay_pool),
        ("surrogate", wide_surrogate),
        ("synthetic", synthetic_bound_tracking),
    ];
    for (name, group) in groups {
        if suite.wants(name) {
            group(&mut suite);
        }
    }
    println!("\n{} checks, {} failed", suite.ran, suite.failed.len());
    if !suite.failed.is_empty() {
        for f in &suite.failed {
            println!("  failed: {f}");
        }
        std::process::exit(1);
    }
}
