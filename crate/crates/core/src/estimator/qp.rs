//! Small constrained least-squares problems `min ‖Ax − b‖²` with either the
//! probability-simplex constraint or the single affine constraint `Σx = 1`.
//!
//! The simplex problem is solved exactly by enumerating every support set:
//! the global minimizer is the affine minimizer of some face that happens to
//! be feasible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_SIMPLEX_DIM: usize = 12;

/// Relative cutoff on singular values when solving face problems.
const RANK_TOL: f64 = 1e-12;
/// Slack allowed on `x ≥ 0` before a face solution counts as infeasible.
const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub x: DVector<f64>,
    pub residual_sq: f64,
    /// The reduced normal matrix of the selected face was rank deficient.
    pub singular: bool,
}

fn residual_sq(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (a * x - b).norm_squared()
}

/// Orthonormal basis of `{u ∈ ℝⁿ : Σu = 0}` (normalized Helmert contrasts).
fn sum_zero_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n - 1, |row, col| {
        let j = col + 1;
        let norm = ((j * (j + 1)) as f64).sqrt();
        if row < j {
            1.0 / norm
        } else if row == j {
            -(j as f64) / norm
        } else {
            0.0
        }
    })
}

/// Minimum-norm minimizer of `‖Ax − b‖²` over `Σx = 1`, measured from the barycenter.
fn affine_face(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let n = a.ncols();
    let center = DVector::from_element(n, 1.0 / n as f64);
    if n == 1 {
        return (center, false);
    }
    let z = sum_zero_basis(n);
    let az = a * &z;
    let rhs = b - a * &center;
    let svd = az.svd(true, true);
    let max_sv = svd.singular_values.max();
    let cutoff = RANK_TOL * max_sv.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    let u = match svd.solve(&rhs, cutoff) {
        Ok(u) => u,
        Err(_) => DVector::zeros(n - 1),
    };
    (center + z * u, rank < n - 1)
}

/// `min ‖Ax − b‖²` subject to `Σx = 1`, signs free.
pub fn affine_lsq(a: &DMatrix<f64>, b: &DVector<f64>) -> LsqSolution {
    let (x, singular) = affine_face(a, b);
    LsqSolution {
        residual_sq: residual_sq(a, b, &x),
        x,
        singular,
    }
}

/// `min ‖Ax − b‖²` subject to `x ≥ 0`, `Σx = 1`.
pub fn simplex_lsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LsqSolution> {
    let k = a.ncols();
    if k == 0 || k > MAX_SIMPLEX_DIM {
        return Err(Error::InvalidSpec(format!(
            "simplex dimension must be in 1..={MAX_SIMPLEX_DIM}, got {k}"
        )));
    }
    let mut best: Option<LsqSolution> = None;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let sub = a.select_columns(support.iter());
        let (xs, singular) = affine_face(&sub, b);
        if xs.iter().any(|v| *v < -FEASIBILITY_TOL) {
            continue;
        }
        let mut x = DVector::zeros(k);
        for (pos, j) in support.iter().enumerate() {
            x[*j] = xs[pos].max(0.0);
        }
        let total = x.sum();
        x /= total;
        let r = residual_sq(a, b, &x);
        if best.as_ref().is_none_or(|cur| r < cur.residual_sq) {
            best = Some(LsqSolution {
                x,
                residual_sq: r,
                singular,
            });
        }
    }
    // Every vertex is feasible, so at least one face qualifies.
    best.ok_or_else(|| Error::Numerical("simplex QP found no feasible face".into()))
}
