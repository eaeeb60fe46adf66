//! Damped Newton solver for penalized logistic likelihoods.
//!
//! Minimizes `J(β) = −Σ_s [c_s ln σ(m_s) + (1 − c_s) ln σ(−m_s)] + ½(β − μ)ᵀP(β − μ)`
//! where `m_s` is the linear margin of row `s`. Rows are supplied through
//! [`Design`] so sparse parameterizations only pay for their nonzeros.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::logistic::{log_sigmoid, sigmoid, sigmoid_deriv};

pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 40;
const ARMIJO: f64 = 1e-4;

pub(crate) trait Design {
    fn n_params(&self) -> usize;
    fn n_rows(&self) -> usize;
    fn label(&self, row: usize) -> f64;
    fn margin(&self, row: usize, beta: &DVector<f64>) -> f64;
    /// `grad += coef · z_row`
    fn add_scaled(&self, row: usize, coef: f64, grad: &mut DVector<f64>);
    /// `hess += w · z_row z_rowᵀ`
    fn add_outer(&self, row: usize, w: f64, hess: &mut DMatrix<f64>);
}

/// Gaussian penalty `½(β − mean)ᵀ precision (β − mean)`.
#[derive(Debug, Clone)]
pub(crate) enum Penalty {
    Diagonal { mean: DVector<f64>, precision: DVector<f64> },
    Dense { mean: DVector<f64>, precision: DMatrix<f64> },
}

impl Penalty {
    fn value(&self, beta: &DVector<f64>) -> f64 {
        match self {
            Penalty::Diagonal { mean, precision } => {
                0.5 * beta
                    .iter()
                    .zip(mean.iter())
                    .zip(precision.iter())
                    .map(|((b, m), p)| p * (b - m) * (b - m))
                    .sum::<f64>()
            }
            Penalty::Dense { mean, precision } => {
                let r = beta - mean;
                0.5 * r.dot(&(precision * &r))
            }
        }
    }

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        match self {
            Penalty::Diagonal { mean, precision } => (beta - mean).component_mul(precision),
            Penalty::Dense { mean, precision } => precision * (beta - mean),
        }
    }

    fn add_hessian(&self, hess: &mut DMatrix<f64>) {
        match self {
            Penalty::Diagonal { precision, .. } => {
                for (k, p) in precision.iter().enumerate() {
                    hess[(k, k)] += p;
                }
            }
            Penalty::Dense { precision, .. } => *hess += precision,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub beta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn objective<D: Design>(design: &D, penalty: &Penalty, beta: &DVector<f64>) -> f64 {
    let mut nll = 0.0;
    for s in 0..design.n_rows() {
        let m = design.margin(s, beta);
        let c = design.label(s);
        nll -= c * log_sigmoid(m) + (1.0 - c) * log_sigmoid(-m);
    }
    nll + penalty.value(beta)
}

/// Gradient of `J`; the penalized log-likelihood gradient is its negation.
pub(crate) fn gradient<D: Design>(design: &D, penalty: &Penalty, beta: &DVector<f64>) -> DVector<f64> {
    let mut g = penalty.gradient(beta);
    for s in 0..design.n_rows() {
        let m = design.margin(s, beta);
        design.add_scaled(s, sigmoid(m) - design.label(s), &mut g);
    }
    g
}

fn hessian<D: Design>(design: &D, penalty: &Penalty, beta: &DVector<f64>) -> DMatrix<f64> {
    let p = design.n_params();
    let mut h = DMatrix::zeros(p, p);
    for s in 0..design.n_rows() {
        let w = sigmoid_deriv(design.margin(s, beta));
        design.add_outer(s, w, &mut h);
    }
    penalty.add_hessian(&mut h);
    h
}

pub(crate) fn minimize<D: Design>(design: &D, penalty: &Penalty, start: DVector<f64>) -> Solution {
    let mut beta = start;
    let mut value = objective(design, penalty, &beta);
    for iteration in 0..MAX_ITERATIONS {
        let g = gradient(design, penalty, &beta);
        if g.amax() < GRAD_TOLERANCE {
            return Solution {
                beta,
                converged: true,
                iterations: iteration,
            };
        }
        let h = hessian(design, penalty, &beta);
        let step = match Cholesky::new(h) {
            Some(chol) => chol.solve(&(-&g)),
            // Penalty is positive definite, so this only triggers on overflow.
            None => -&g,
        };
        let slope = g.dot(&step);
        // Near the optimum the decrease drops below the rounding noise of J.
        let noise = 64.0 * f64::EPSILON * (value.abs() + 1.0);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + &step * t;
            let cand_value = objective(design, penalty, &candidate);
            if cand_value <= value + ARMIJO * t * slope + noise {
                beta = candidate;
                value = cand_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let converged = gradient(design, penalty, &beta).amax() < GRAD_TOLERANCE;
    Solution {
        beta,
        converged,
        iterations: MAX_ITERATIONS,
    }
}
