//! Monte Carlo simulation studies of the MIDAS estimator.
//!
//! Regressor lag `i` at target index `k` is `N(drift·k + i/m, variance)`; the
//! target density is the exact Almon/combination mixture of its lags. Raw
//! samples are drawn from every density (Accept/Reject for the target), turned
//! back into densities by KDE, and the model is refit.
//!
//! Target times are laid out as `t_k = L·k` with a stride `L` large enough that
//! the lag windows of consecutive targets never share a key, so each lag key
//! has exactly one law.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::almon::{softmax_weights, AlmonTheta};
use crate::density::{bandwidth, kde_values, normal_pdf, DensityGrid, Grid, SampleSet};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig, TrainingSet};
use crate::model::{MixedSeries, ModelSpec, RegressorSpec};
use crate::time::TimeIndex;

/// Series id of the dependent variable in panels and grid files.
pub const TARGET_ID: &str = "target";
/// Standard deviations of support on each side of the simulation grid.
const GRID_SDS: f64 = 4.0;
/// Standard deviations of support for the fine Accept/Reject grid.
const SAMPLING_SDS: f64 = 8.0;
/// Envelope safety factor over the maximum target height.
const ENVELOPE_SAFETY: f64 = 1.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRegressor {
    pub m: u32,
    pub p: usize,
    /// True Almon parameters; their count is the degree `q`.
    pub theta: Vec<f64>,
    pub drift: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDesign {
    /// Number of target observations `T`.
    pub t: usize,
    /// Sample size `M` per density.
    pub m_samples: usize,
    pub h: TimeIndex,
    /// True combination weights, one per regressor.
    pub a: Vec<f64>,
    pub regressors: Vec<SimRegressor>,
    pub replications: usize,
    pub seed: u64,
    pub grid_points: usize,
    /// Resolution of the local grid the target sampler interpolates.
    pub sampling_points: usize,
    /// Lags generated beyond each regressor's `p`, for lag-order selection.
    pub extra_lags: usize,
}

impl Default for SimDesign {
    fn default() -> Self {
        SimDesign::univariate(100, 100, 3)
    }
}

impl SimDesign {
    /// One regressor, `m = 3`, `h = 1/3`, `θ = −0.05`, lags `N(0.01k + i/3, 1)`.
    pub fn univariate(t: usize, m_samples: usize, p: usize) -> Self {
        SimDesign {
            t,
            m_samples,
            h: TimeIndex::new(1, 3).expect("nonzero denominator"),
            a: vec![1.0],
            regressors: vec![SimRegressor {
                m: 3,
                p,
                theta: vec![-0.05],
                drift: 0.01,
                variance: 1.0,
            }],
            replications: 100,
            seed: 0,
            grid_points: 30,
            sampling_points: 1024,
            extra_lags: 0,
        }
    }

    /// Adds a second regressor `N(0.012k + i/3, 2)` with `Θ₂ = (0.2, −0.03)` and `a = (0.4, 0.6)`.
    pub fn multivariate(t: usize, m_samples: usize, p: usize) -> Self {
        let mut design = SimDesign::univariate(t, m_samples, p);
        design.a = vec![0.4, 0.6];
        design.regressors.push(SimRegressor {
            m: 3,
            p,
            theta: vec![0.2, -0.03],
            drift: 0.012,
            variance: 2.0,
        });
        design
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.t == 0 || self.replications == 0 {
            return bad("t and replications must be at least 1".into());
        }
        if self.m_samples < 2 {
            return bad("m_samples must be at least 2".into());
        }
        if self.grid_points < 2 || self.sampling_points < 2 {
            return bad("grid_points and sampling_points must be at least 2".into());
        }
        if self.regressors.is_empty() || self.a.len() != self.regressors.len() {
            return bad("one combination weight per regressor is required".into());
        }
        let total: f64 = self.a.iter().sum();
        if self.a.iter().any(|a| !(*a >= 0.0)) || (total - 1.0).abs() > 1e-10 {
            return bad("combination weights must lie on the simplex".into());
        }
        if self.h.is_negative() {
            return bad("h must be nonnegative".into());
        }
        for (k, r) in self.regressors.iter().enumerate() {
            if r.m == 0 || r.p == 0 || r.theta.is_empty() {
                return bad(format!("regressor {}: m, p and theta must be nonempty", k + 1));
            }
            if !(r.variance > 0.0) || !r.drift.is_finite() {
                return bad(format!("regressor {}: variance must be positive", k + 1));
            }
            if !self.h.is_multiple_of(r.m) {
                return bad(format!("regressor {}: h must be a multiple of 1/m", k + 1));
            }
            crate::almon::AlmonSpec::new(r.theta.len(), r.p)?;
        }
        Ok(())
    }

    pub fn series_id(index: usize) -> String {
        format!("g{}", index + 1)
    }

    /// Spacing between consecutive target times.
    pub fn stride(&self) -> i64 {
        self.regressors
            .iter()
            .map(|r| {
                let span = self.h + TimeIndex::new((r.p + self.extra_lags) as i64, r.m as i64).unwrap();
                span.ceil().max(1)
            })
            .max()
            .unwrap_or(1)
    }

    pub fn target_time(&self, k: usize) -> TimeIndex {
        TimeIndex::integer(self.stride() * k as i64)
    }

    /// Key of lag `lag` of regressor `r` for target `k`.
    pub fn lag_time(&self, r: usize, k: usize, lag: usize) -> TimeIndex {
        self.target_time(k).lagged(self.h, lag, self.regressors[r].m)
    }

    pub fn lag_mean(&self, r: usize, k: usize, lag: usize) -> f64 {
        let reg = &self.regressors[r];
        reg.drift * k as f64 + lag as f64 / reg.m as f64
    }

    fn lags_generated(&self, r: usize) -> usize {
        self.regressors[r].p + self.extra_lags
    }

    /// MIDAS specification matching the design.
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::midas(
            self.regressors
                .iter()
                .enumerate()
                .map(|(k, r)| RegressorSpec::almon(SimDesign::series_id(k), r.m, r.p, self.h, r.theta.len()))
                .collect(),
        )
    }

    /// Estimation grid covering every mean `± 4` standard deviations.
    pub fn grid(&self) -> Result<Grid> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut sd: f64 = 0.0;
        for (r, reg) in self.regressors.iter().enumerate() {
            for k in [1, self.t] {
                for lag in [1, self.lags_generated(r)] {
                    let mean = self.lag_mean(r, k, lag);
                    lo = lo.min(mean);
                    hi = hi.max(mean);
                }
            }
            sd = sd.max(reg.variance.sqrt());
        }
        Grid::new(lo - GRID_SDS * sd, hi + GRID_SDS * sd, self.grid_points)
    }

    /// Parameter names in report order: `theta_<k>_<r>`, then `a_<k>` when `K > 1`.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (k, r) in self.regressors.iter().enumerate() {
            for j in 0..r.theta.len() {
                names.push(format!("theta_{}_{}", k + 1, j + 1));
            }
        }
        if self.regressors.len() > 1 {
            for k in 0..self.regressors.len() {
                names.push(format!("a_{}", k + 1));
            }
        }
        names
    }

    pub fn true_parameters(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.regressors.iter().flat_map(|r| r.theta.iter().copied()).collect();
        if self.regressors.len() > 1 {
            out.extend_from_slice(&self.a);
        }
        out
    }

    /// Mixture components `(weight, mean, variance)` of target `k`.
    fn target_components(&self, k: usize) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (r, reg) in self.regressors.iter().enumerate() {
            for (i, b) in softmax_weights(reg.p, &reg.theta).into_iter().enumerate() {
                out.push((self.a[r] * b, self.lag_mean(r, k, i + 1), reg.variance));
            }
        }
        out
    }

    pub fn target_pdf(&self, k: usize, x: f64) -> f64 {
        self.target_components(k)
            .iter()
            .map(|(w, mean, var)| w * normal_pdf(x, *mean, *var))
            .sum()
    }

    /// True regressor density on `grid`.
    pub fn regressor_truth(&self, grid: &Grid, r: usize, k: usize, lag: usize) -> Result<DensityGrid> {
        let mean = self.lag_mean(r, k, lag);
        let var = self.regressors[r].variance;
        DensityGrid::from_fn(*grid, |x| normal_pdf(x, mean, var))
    }

    /// True target density on `grid`: the exact mixture of the lag densities.
    pub fn target_truth(&self, grid: &Grid, k: usize) -> Result<DensityGrid> {
        let components = self.target_components(k);
        DensityGrid::from_fn(*grid, |x| {
            components.iter().map(|(w, mean, var)| w * normal_pdf(x, *mean, *var)).sum()
        })
    }

    /// Fine local grid used to sample target `k`.
    fn sampling_grid(&self, k: usize) -> Result<Grid> {
        let components = self.target_components(k);
        let lo = components.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let hi = components.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let sd = components.iter().map(|c| c.2.sqrt()).fold(0.0, f64::max);
        Grid::new(lo - SAMPLING_SDS * sd, hi + SAMPLING_SDS * sd, self.sampling_points)
    }
}

/// `m` i.i.d. draws from the piecewise-linear interpolant of `target`, using a
/// uniform proposal over the grid interval and envelope `1.01 · max height`.
pub fn sample_accept_reject<R: Rng + ?Sized>(
    target: &DensityGrid,
    m: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    let grid = target.grid();
    let values = target.values();
    let peak = values.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidDensity("cannot sample from an all-zero density".into()));
    }
    let envelope = ENVELOPE_SAFETY * peak;
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let x = rng.gen_range(grid.lo()..=grid.hi());
        let height = grid.interpolate(values, x);
        debug_assert!(height <= envelope, "interpolant exceeds the envelope");
        if rng.gen::<f64>() * envelope <= height {
            out.push(x);
        }
    }
    SampleSet::new(out)
}

/// Visits every sample set of one replication in a fixed order: for each
/// target index, every lag of every regressor, then the target itself.
pub fn for_each_sample_set<F>(design: &SimDesign, replication: u64, mut visit: F) -> Result<()>
where
    F: FnMut(&str, TimeIndex, SampleSet) -> Result<()>,
{
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(replication);
    let ids: Vec<String> = (0..design.regressors.len()).map(SimDesign::series_id).collect();
    for k in 1..=design.t {
        for (r, reg) in design.regressors.iter().enumerate() {
            let normal = |mean: f64| {
                Normal::new(mean, reg.variance.sqrt())
                    .map_err(|e| Error::InvalidConfig(format!("normal law: {e}")))
            };
            for lag in 1..=design.lags_generated(r) {
                let law = normal(design.lag_mean(r, k, lag))?;
                let draws: Vec<f64> = (0..design.m_samples).map(|_| law.sample(&mut rng)).collect();
                visit(&ids[r], design.lag_time(r, k, lag), SampleSet::new(draws)?)?;
            }
        }
        let fine = design.target_truth(&design.sampling_grid(k)?, k)?;
        let draws = sample_accept_reject(&fine, design.m_samples, &mut rng)?;
        visit(TARGET_ID, design.target_time(k), draws)?;
    }
    Ok(())
}

fn empty_series(design: &SimDesign, grid: &Grid) -> Result<BTreeMap<String, MixedSeries>> {
    design
        .regressors
        .iter()
        .enumerate()
        .map(|(r, reg)| Ok((SimDesign::series_id(r), MixedSeries::new(reg.m, *grid)?)))
        .collect()
}

/// Estimated densities (KDE on the design grid) for one replication.
pub fn simulate_dataset(design: &SimDesign, replication: u64) -> Result<TrainingSet> {
    let grid = design.grid()?;
    let mut regs = empty_series(design, &grid)?;
    let mut targets = BTreeMap::new();
    for_each_sample_set(design, replication, |id, t, samples| {
        let bw = bandwidth(&samples)?;
        let density = DensityGrid::new(grid, kde_values(&samples, &grid, bw)?)?;
        if id == TARGET_ID {
            targets.insert(t, density);
            Ok(())
        } else {
            regs.get_mut(id).expect("known series").insert(t, density)
        }
    })?;
    TrainingSet::new(targets, regs)
}

/// True densities on the design grid; fitting them recovers the parameters exactly.
pub fn truth_dataset(design: &SimDesign) -> Result<TrainingSet> {
    design.validate()?;
    let grid = design.grid()?;
    let mut regs = empty_series(design, &grid)?;
    let mut targets = BTreeMap::new();
    for k in 1..=design.t {
        for r in 0..design.regressors.len() {
            let series = regs.get_mut(&SimDesign::series_id(r)).expect("known series");
            for lag in 1..=design.lags_generated(r) {
                series.insert(design.lag_time(r, k, lag), design.regressor_truth(&grid, r, k, lag)?)?;
            }
        }
        targets.insert(design.target_time(k), design.target_truth(&grid, k)?);
    }
    TrainingSet::new(targets, regs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamStats {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub design: SimDesign,
    pub params: Vec<ParamStats>,
    /// Estimates per successful replication, in parameter order.
    pub estimates: Vec<Vec<f64>>,
    pub failures: usize,
}

impl MonteCarloReport {
    pub fn r_effective(&self) -> usize {
        self.estimates.len()
    }

    pub fn param(&self, name: &str) -> Option<&ParamStats> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Bias, SD and RMSE with population (divide-by-R) moments.
pub fn summarize(names: &[String], truths: &[f64], estimates: &[Vec<f64>]) -> Vec<ParamStats> {
    let r = estimates.len() as f64;
    names
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(j, (name, truth))| {
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / r;
            let var = estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / r;
            let mse = estimates.iter().map(|e| (e[j] - truth).powi(2)).sum::<f64>() / r;
            ParamStats {
                name: name.clone(),
                truth: *truth,
                bias: mean - truth,
                sd: var.sqrt(),
                rmse: mse.sqrt(),
            }
        })
        .collect()
}

fn estimates_of(theta: &[AlmonTheta], a: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = theta.iter().flat_map(|t| t.as_slice().iter().copied()).collect();
    if a.len() > 1 {
        out.extend_from_slice(a);
    }
    out
}

/// Runs every replication (in parallel, each on its own RNG stream) and
/// aggregates the parameter estimates.
pub fn run_study(design: &SimDesign, fit_config: &FitConfig) -> Result<MonteCarloReport> {
    design.validate()?;
    let spec = design.spec();
    let outcomes: Vec<Result<Vec<f64>>> = (0..design.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let data = simulate_dataset(design, rep)?;
            let model = fit(&spec, &data, fit_config)?;
            Ok(estimates_of(&model.theta, &model.a))
        })
        .collect();
    let mut estimates = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(e) => estimates.push(e),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    if estimates.is_empty() {
        return Err(Error::Numerical("every replication failed".into()));
    }
    let params = summarize(&design.parameter_names(), &design.true_parameters(), &estimates);
    Ok(MonteCarloReport {
        design: design.clone(),
        params,
        estimates,
        failures,
    })
}
