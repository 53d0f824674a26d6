//! Stacked regression design for the least-squares objective.
//!
//! Every usable target time contributes one row per grid point, scaled by
//! `√Δs`, so that `‖y − Xw‖²` equals `Σ_t Σ_i (f_t(s_i) − f̂_t(s_i))² Δs`.
//! A thin QR of `X` reduces every later evaluation to `‖R w − c‖² + ρ²`
//! with `R` of size `P × P`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::TrainingSet;
use crate::error::{Error, Result};
use crate::model::{resolve_lags, ModelSpec};
use crate::time::TimeIndex;

#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub times: Vec<TimeIndex>,
    pub n_points: usize,
    /// `√Δs`, the row scale.
    pub sqrt_ds: f64,
    /// Weighted lag columns, rows ordered time-major.
    pub x: Arc<DMatrix<f64>>,
    /// Weighted targets.
    pub y: DVector<f64>,
    /// First column of each regressor block.
    pub offsets: Vec<usize>,
    q: Arc<DMatrix<f64>>,
    pub r: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Norm of the part of `y` orthogonal to the column space.
    pub rho: f64,
}

impl Design {
    pub fn build(spec: &ModelSpec, data: &TrainingSet, times: &[TimeIndex]) -> Result<Design> {
        let grid = data.grid();
        let n = grid.n_points();
        let sqrt_ds = grid.spacing().sqrt();
        let cols = spec.lag_count();
        let rows = times.len() * n;
        if rows < cols || times.is_empty() {
            return Err(Error::NotIdentifiable {
                equations: rows,
                parameters: cols,
            });
        }

        let mut offsets = Vec::with_capacity(spec.regressors.len());
        let mut col = 0;
        for r in &spec.regressors {
            offsets.push(col);
            col += r.p;
        }

        let mut x = DMatrix::zeros(rows, cols);
        let mut y = DVector::zeros(rows);
        for (ti, t) in times.iter().enumerate() {
            let target = data
                .targets()
                .get(t)
                .ok_or_else(|| Error::NoUsableTimes(format!("no target density at {t}")))?;
            for (j, v) in target.values().iter().enumerate() {
                y[ti * n + j] = sqrt_ds * v;
            }
            for (r, off) in spec.regressors.iter().zip(&offsets) {
                let series = data.series(&r.series_id)?;
                for (lag, g) in resolve_lags(r, series, *t)?.into_iter().enumerate() {
                    for (j, v) in g.values().iter().enumerate() {
                        x[(ti * n + j, off + lag)] = sqrt_ds * v;
                    }
                }
            }
        }

        let qr = x.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let mut design = Design {
            times: times.to_vec(),
            n_points: n,
            sqrt_ds,
            x: Arc::new(x),
            y: DVector::zeros(0),
            offsets,
            q: Arc::new(q),
            r,
            c: DVector::zeros(0),
            rho: 0.0,
        };
        design.set_targets(y);
        Ok(design)
    }

    fn set_targets(&mut self, y: DVector<f64>) {
        let c = self.q.tr_mul(&y);
        self.rho = (&y - &*self.q * &c).norm();
        self.c = c;
        self.y = y;
    }

    /// Same regressors, new unweighted target heights (time-major, length `T·N`).
    pub fn with_targets(&self, unweighted: &[f64]) -> Design {
        let y = DVector::from_fn(self.y.len(), |row, _| self.sqrt_ds * unweighted[row]);
        let mut out = self.clone();
        out.set_targets(y);
        out
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    /// Objective and its gradient with respect to the lag coefficients `w`.
    pub fn reduced_objective_grad(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let resid = &self.r * w - &self.c;
        let f = resid.norm_squared() + self.rho * self.rho;
        (f, self.r.tr_mul(&resid) * 2.0)
    }

    /// Objective computed from the full residuals.
    pub fn direct_objective(&self, w: &DVector<f64>) -> f64 {
        (&self.y - &*self.x * w).norm_squared()
    }

    pub fn direct_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let resid = &*self.x * w - &self.y;
        self.x.tr_mul(&resid) * 2.0
    }

    /// Unweighted fitted heights `X w`, time-major.
    pub fn fitted(&self, w: &DVector<f64>) -> Vec<f64> {
        let fx = &*self.x * w;
        fx.iter().map(|v| v / self.sqrt_ds).collect()
    }

    /// Unweighted target heights, time-major.
    pub fn targets(&self) -> Vec<f64> {
        self.y.iter().map(|v| v / self.sqrt_ds).collect()
    }
}
