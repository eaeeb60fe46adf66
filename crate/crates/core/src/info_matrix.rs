//! Observed Fisher information with a maintained inverse.
//!
//! `H = ridge·I + Σ_s w_s z_s z_sᵀ` where `w_s = σ̇(θᵀz_s)` is evaluated at the
//! parameter estimate current when the record arrived. The inverse is kept up
//! to date with rank-one Sherman–Morrison updates and re-factorized from `H`
//! every [`DEFAULT_REFRESH_INTERVAL`] updates, or earlier when the residual
//! `‖H·H⁻¹z − z‖` along an update direction exceeds [`RESIDUAL_TOLERANCE`].

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{ComparisonHistory, ItemPool};
use crate::error::{Error, Result};
use crate::logistic::sigmoid_deriv;

pub const DEFAULT_RIDGE: f64 = 1.0;
pub const DEFAULT_REFRESH_INTERVAL: usize = 1000;
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;

const JITTER: f64 = 1e-10;
const JITTER_ATTEMPTS: usize = 3;

#[derive(Debug)]
pub struct InfoMatrix {
    h: DMatrix<f64>,
    hinv: DMatrix<f64>,
    ridge: f64,
    refresh_interval: Option<usize>,
    updates_since_refresh: usize,
    refreshes: usize,
    clamped: AtomicU64,
}

impl Clone for InfoMatrix {
    fn clone(&self) -> Self {
        InfoMatrix {
            h: self.h.clone(),
            hinv: self.hinv.clone(),
            ridge: self.ridge,
            refresh_interval: self.refresh_interval,
            updates_since_refresh: self.updates_since_refresh,
            refreshes: self.refreshes,
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl InfoMatrix {
    /// Prior-only information `ridge·I`.
    pub fn prior(dim: usize, ridge: f64) -> Result<Self> {
        if ridge <= 0.0 {
            return Err(Error::RankDeficient {
                deficient: dim,
                dim,
            });
        }
        Ok(Self::from_parts(
            DMatrix::identity(dim, dim) * ridge,
            DMatrix::identity(dim, dim) / ridge,
            ridge,
        ))
    }

    /// Information with an arbitrary positive-definite precision as its base.
    pub fn from_precision(precision: DMatrix<f64>) -> Result<Self> {
        let hinv = invert_spd(&precision)?;
        Ok(Self::from_parts(precision, hinv, 0.0))
    }

    fn from_parts(h: DMatrix<f64>, hinv: DMatrix<f64>, ridge: f64) -> Self {
        InfoMatrix {
            h,
            hinv,
            ridge,
            refresh_interval: Some(DEFAULT_REFRESH_INTERVAL),
            updates_since_refresh: 0,
            refreshes: 0,
            clamped: AtomicU64::new(0),
        }
    }

    /// Disables (`None`) or changes the periodic re-factorization.
    pub fn with_refresh_interval(mut self, interval: Option<usize>) -> Self {
        self.refresh_interval = interval;
        self
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn hinv(&self) -> &DMatrix<f64> {
        &self.hinv
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Number of full re-factorizations performed so far.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    /// Number of negative quadratic forms clamped to zero by [`Self::weighted_norm`].
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Rank-one update `H ← H + w zzᵀ`, with the matching Sherman–Morrison
    /// update of the inverse.
    pub fn sherman_morrison_update(&mut self, z: &DVector<f64>, w: f64) {
        debug_assert!(w >= 0.0);
        if w == 0.0 {
            return;
        }
        let d = self.dim();
        let u = &self.hinv * z;
        let denom = 1.0 + w * z.dot(&u);
        let scale = w / denom;
        for c in 0..d {
            for r in 0..d {
                self.hinv[(r, c)] -= scale * (u[r] * u[c]);
                self.h[(r, c)] += w * (z[r] * z[c]);
            }
        }
        self.updates_since_refresh += 1;

        let due = self
            .refresh_interval
            .is_some_and(|k| self.updates_since_refresh >= k);
        if due || (self.refresh_interval.is_some() && self.direction_residual(z) > RESIDUAL_TOLERANCE) {
            // H is positive definite whenever the old inverse was valid.
            if self.refresh().is_err() {
                log::warn!("information matrix refresh failed; keeping incremental inverse");
            }
        }
    }

    fn direction_residual(&self, z: &DVector<f64>) -> f64 {
        let scale = z.amax();
        if scale == 0.0 {
            return 0.0;
        }
        ((&self.h * (&self.hinv * z)) - z).amax() / scale
    }

    /// Recomputes the inverse from `H` by direct factorization.
    pub fn refresh(&mut self) -> Result<()> {
        self.hinv = invert_symmetric(&self.h)?;
        self.updates_since_refresh = 0;
        self.refreshes += 1;
        Ok(())
    }

    /// Max-entry residual of `H·H⁻¹ − I`.
    pub fn identity_residual(&self) -> f64 {
        let d = self.dim();
        (&self.h * &self.hinv - DMatrix::<f64>::identity(d, d)).amax()
    }

    /// `zᵀ H⁻¹ z`, clamped at zero.
    pub fn weighted_norm_sq(&self, z: &DVector<f64>) -> f64 {
        let q = z.dot(&(&self.hinv * z));
        if q < 0.0 {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            0.0
        } else {
            q
        }
    }

    /// `‖z‖_{H⁻¹} = √(zᵀ H⁻¹ z)`.
    pub fn weighted_norm(&self, z: &DVector<f64>) -> f64 {
        self.weighted_norm_sq(z).sqrt()
    }

    /// Smallest eigenvalue of `H`.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.h.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `H = ridge·I + Σ_s σ̇(θᵀz_s) z_s z_sᵀ`, inverse by direct factorization.
pub fn observed_fisher(
    history: &ComparisonHistory,
    pool: &ItemPool,
    theta: &DVector<f64>,
    ridge: f64,
) -> Result<InfoMatrix> {
    if ridge < 0.0 {
        return Err(Error::Validation(format!("ridge must be nonnegative, got {ridge}")));
    }
    let d = pool.dim();
    let mut h = DMatrix::identity(d, d) * ridge;
    for rec in history.records() {
        let z = pool.diff_vector(rec.i, rec.j)?;
        let w = sigmoid_deriv(theta.dot(&z));
        for c in 0..d {
            for r in 0..d {
                h[(r, c)] += w * (z[r] * z[c]);
            }
        }
    }
    let hinv = invert_symmetric(&h)?;
    Ok(InfoMatrix::from_parts(h, hinv, ridge))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    invert_symmetric(m)
}

fn invert_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if let Some(chol) = Cholesky::new(m.clone()) {
        let inv = chol.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return Ok(symmetrize(inv));
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = top.max(1.0) * d as f64 * f64::EPSILON * 16.0;
    let deficient = eig.eigenvalues.iter().filter(|&&v| v <= tol).count();
    Err(Error::RankDeficient {
        deficient: deficient.max(1),
        dim: d,
    })
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    for r in 0..d {
        for c in (r + 1)..d {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
    m
}

/// Draws from `N(mean, cov)` using a lower Cholesky factor of `cov`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    /// Factorizes `cov`, retrying with growing diagonal jitter
    /// (1e-10, 1e-9, 1e-8) before giving up.
    /// An all-zero `cov` is treated as a point mass at `mean`.
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        if cov.iter().all(|v| *v == 0.0) {
            return Ok(GaussianSampler {
                factor: DMatrix::zeros(d, d),
                mean,
            });
        }
        let mut attempt = Cholesky::<f64, Dyn>::new(cov.clone());
        let mut jitter = JITTER;
        let mut tries = 0;
        while attempt.is_none() && tries < JITTER_ATTEMPTS {
            attempt = Cholesky::new(cov + DMatrix::identity(d, d) * jitter);
            jitter *= 10.0;
            tries += 1;
        }
        let chol = attempt.ok_or(Error::Factorization { attempts: tries })?;
        Ok(GaussianSampler {
            mean,
            factor: chol.l(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `k` draws as rows of a `k × d` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let normals = DMatrix::<f64>::from_fn(d, k, |_, _| rng.sample(StandardNormal));
        let mut draws = (&self.factor * normals).transpose();
        for mut row in draws.row_iter_mut() {
            row += self.mean.transpose();
        }
        draws
    }
}

/// `k` independent draws from `N(mean, cov)`, one per row.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    Ok(GaussianSampler::new(mean.clone(), cov)?.sample(k, rng))
}
