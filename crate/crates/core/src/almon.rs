//! Exponential Almon lag weights
//! `b(i, Θ) = exp(θ₁i + … + θ_q i^q) / Σ_j exp(θ₁j + … + θ_q j^q)`, `i = 1..p`,
//! with analytic first and second derivatives in `Θ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 4;

/// Exponents are clamped to this magnitude so that huge but finite
/// parameters cannot produce `inf - inf`.
const EXPONENT_CLAMP: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlmonSpec {
    q: usize,
    p: usize,
}

impl AlmonSpec {
    pub fn new(q: usize, p: usize) -> Result<Self> {
        if !(1..=MAX_DEGREE).contains(&q) {
            return Err(Error::InvalidSpec(format!(
                "Almon degree q must be in 1..={MAX_DEGREE}, got {q}"
            )));
        }
        if p == 0 {
            return Err(Error::InvalidSpec("lag count p must be at least 1".into()));
        }
        Ok(AlmonSpec { q, p })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// Parameter vector `(θ₁, …, θ_q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlmonTheta(pub Vec<f64>);

impl AlmonTheta {
    pub fn zeros(q: usize) -> Self {
        AlmonTheta(vec![0.0; q])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for AlmonTheta {
    fn from(v: Vec<f64>) -> Self {
        AlmonTheta(v)
    }
}

fn check(spec: &AlmonSpec, theta: &AlmonTheta) -> Result<()> {
    if theta.len() != spec.q {
        return Err(Error::InvalidSpec(format!(
            "theta has {} entries, Almon degree is {}",
            theta.len(),
            spec.q
        )));
    }
    if theta.0.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidSpec("theta must be finite".into()));
    }
    Ok(())
}

/// `i^r` for `r = 1..=q`.
fn powers(i: usize, q: usize) -> impl Iterator<Item = f64> {
    let i = i as f64;
    (1..=q as i32).map(move |r| i.powi(r))
}

fn exponent(i: usize, theta: &[f64]) -> f64 {
    powers(i, theta.len())
        .zip(theta)
        .map(|(x, t)| x * t)
        .sum::<f64>()
        .clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP)
}

/// Lag weights `b(1..p, Θ)`; positive and summing to one.
pub fn weights(spec: &AlmonSpec, theta: &AlmonTheta) -> Result<Vec<f64>> {
    check(spec, theta)?;
    Ok(softmax_weights(spec.p, theta.as_slice()))
}

pub(crate) fn softmax_weights(p: usize, theta: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = (1..=p).map(|i| exponent(i, theta)).collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = exps.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Weighted mean of `i^r` under the lag weights, for `r = 1..=q`.
fn power_means(w: &[f64], q: usize) -> Vec<f64> {
    let mut mu = vec![0.0; q];
    for (idx, wi) in w.iter().enumerate() {
        for (r, x) in powers(idx + 1, q).enumerate() {
            mu[r] += wi * x;
        }
    }
    mu
}

/// `p × q` Jacobian `∂b(i, Θ)/∂θ_r = b_i (i^r − Σ_j b_j j^r)`.
pub fn weights_grad(spec: &AlmonSpec, theta: &AlmonTheta) -> Result<DMatrix<f64>> {
    check(spec, theta)?;
    Ok(softmax_jacobian(spec.p, theta.as_slice()))
}

pub(crate) fn softmax_jacobian(p: usize, theta: &[f64]) -> DMatrix<f64> {
    let q = theta.len();
    let w = softmax_weights(p, theta);
    let mu = power_means(&w, q);
    DMatrix::from_fn(p, q, |i, r| w[i] * ((i as f64 + 1.0).powi(r as i32 + 1) - mu[r]))
}

/// Second derivatives: entry `i` is the `q × q` Hessian of `b(i, Θ)`,
/// `b_i [(x_ir − μ_r)(x_is − μ_s) − C_rs]` with `C` the weighted covariance of the powers.
pub fn weights_hessian(spec: &AlmonSpec, theta: &AlmonTheta) -> Result<Vec<DMatrix<f64>>> {
    check(spec, theta)?;
    let q = spec.q;
    let w = softmax_weights(spec.p, theta.as_slice());
    let mu = power_means(&w, q);
    let centered: Vec<Vec<f64>> = (1..=spec.p)
        .map(|i| powers(i, q).zip(&mu).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = DMatrix::<f64>::zeros(q, q);
    for (wi, c) in w.iter().zip(&centered) {
        for r in 0..q {
            for s in 0..q {
                cov[(r, s)] += wi * c[r] * c[s];
            }
        }
    }
    Ok(w
        .iter()
        .zip(&centered)
        .map(|(wi, c)| DMatrix::from_fn(q, q, |r, s| wi * (c[r] * c[s] - cov[(r, s)])))
        .collect())
}
