//! Residual bootstrap significance test for combination coefficients.
//!
//! Residuals `f_t(s_i) − f̂_t(s_i)` are resampled with replacement within each
//! target time across grid points, added back to the fitted densities, and
//! the model is refit on every replicate.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{build_design, fit_design, TrainingSet};
use crate::model::{FittedModel, ModelKind, WeightFamily};

/// Replicate failure share above which results are flagged.
pub const FAILURE_FLAG_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Use the recentered two-sided p-value instead of the exceedance frequency.
    pub two_sided: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_bootstrap: 1000,
            seed: 0,
            two_sided: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bootstrap < 100 {
            return Err(Error::InvalidConfig(format!(
                "n_bootstrap must be at least 100, got {}",
                self.n_bootstrap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub coefficient_id: String,
    pub estimate: f64,
    /// Estimates from the replicates that fitted successfully, in replicate order.
    pub replicate_estimates: Vec<f64>,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReport {
    pub results: Vec<BootstrapResult>,
    pub failures: usize,
    /// More than [`FAILURE_FLAG_SHARE`] of the replicates failed to fit.
    pub high_failure_rate: bool,
    /// Whether the fit being tested had converged.
    pub base_converged: bool,
}

impl BootstrapReport {
    pub fn b_effective(&self) -> usize {
        self.results.first().map_or(0, |r| r.replicate_estimates.len())
    }
}

/// Named combination coefficients of a fitted model.
///
/// MIDAS reports `a_k` under the series id. UMIDAS reports `a_k` for
/// single-lag regressors and `<series>_lag<i>` for unrestricted lags.
pub fn coefficients(model: &FittedModel) -> Result<Vec<(String, f64)>> {
    match model.spec.kind {
        ModelKind::Ave => Err(Error::InvalidSpec("AVE has no coefficients to test".into())),
        ModelKind::Midas => Ok(model
            .spec
            .regressors
            .iter()
            .zip(&model.a)
            .map(|(r, a)| (r.series_id.clone(), *a))
            .collect()),
        ModelKind::Umidas => {
            let lags = model.lag_coefficients()?;
            let mut out = Vec::new();
            for (r, coefs) in model.spec.regressors.iter().zip(lags) {
                match r.weights {
                    WeightFamily::Unrestricted => {
                        for (i, c) in coefs.into_iter().enumerate() {
                            out.push((format!("{}_lag{}", r.series_id, i + 1), c));
                        }
                    }
                    WeightFamily::Almon { .. } => out.push((r.series_id.clone(), coefs[0])),
                }
            }
            Ok(out)
        }
    }
}

/// Share of replicates at or above the estimate.
pub fn exceedance_p_value(estimate: f64, replicates: &[f64]) -> f64 {
    if replicates.is_empty() {
        return f64::NAN;
    }
    replicates.iter().filter(|b| **b >= estimate).count() as f64 / replicates.len() as f64
}

/// `2·min(P(c ≥ â), P(c ≤ â))`, capped at 1, with `c` the replicates shifted to mean zero.
pub fn two_sided_p_value(estimate: f64, replicates: &[f64]) -> f64 {
    if replicates.is_empty() {
        return f64::NAN;
    }
    let n = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / n;
    let upper = replicates.iter().filter(|b| **b - mean >= estimate).count() as f64 / n;
    let lower = replicates.iter().filter(|b| **b - mean <= estimate).count() as f64 / n;
    (2.0 * upper.min(lower)).min(1.0)
}

pub fn bootstrap_test(
    fitted: &FittedModel,
    data: &TrainingSet,
    config: &BootstrapConfig,
) -> Result<BootstrapReport> {
    config.validate()?;
    let base = coefficients(fitted)?;
    if *data.grid() != fitted.grid {
        return Err(Error::GridMismatch);
    }
    let design = build_design(&fitted.spec, data)?;
    let w: Vec<f64> = fitted.lag_coefficients()?.into_iter().flatten().collect();
    let fitted_heights = design.fitted(&DVector::from_vec(w));
    let residuals: Vec<f64> = design
        .targets()
        .iter()
        .zip(&fitted_heights)
        .map(|(f, fh)| f - fh)
        .collect();
    let n = design.n_points;

    let replicates: Vec<Option<Vec<f64>>> = (0..config.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64);
            let mut targets = fitted_heights.clone();
            for (block, res) in targets.chunks_mut(n).zip(residuals.chunks(n)) {
                for v in block.iter_mut() {
                    *v += res[rng.gen_range(0..n)];
                }
            }
            let replicate = design.with_targets(&targets);
            match fit_design(&fitted.spec, &replicate, fitted.grid, &fitted.fit_config)
                .and_then(|m| coefficients(&m))
            {
                Ok(c) => Some(c.into_iter().map(|(_, v)| v).collect()),
                Err(e) => {
                    log::debug!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let failures = replicates.iter().filter(|r| r.is_none()).count();
    let ok: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every bootstrap replicate failed to fit".into()));
    }
    let high_failure_rate = failures as f64 > FAILURE_FLAG_SHARE * config.n_bootstrap as f64;
    if high_failure_rate {
        log::warn!("{failures} of {} bootstrap replicates failed", config.n_bootstrap);
    }
    if !fitted.diagnostics.converged {
        log::warn!("bootstrapping a fit that did not converge");
    }

    let results = base
        .into_iter()
        .enumerate()
        .map(|(j, (id, estimate))| {
            let reps: Vec<f64> = ok.iter().map(|r| r[j]).collect();
            let p_value = if config.two_sided {
                two_sided_p_value(estimate, &reps)
            } else {
                exceedance_p_value(estimate, &reps)
            };
            BootstrapResult {
                coefficient_id: id,
                estimate,
                replicate_estimates: reps,
                p_value,
            }
        })
        .collect();
    Ok(BootstrapReport {
        results,
        failures,
        high_failure_rate,
        base_converged: fitted.diagnostics.converged,
    })
}
