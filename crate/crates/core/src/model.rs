//! Model specifications, mixed-frequency series and forward prediction for
//! PDF-MIDAS, PDF-UMIDAS and the AVE baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::almon::{self, AlmonSpec, AlmonTheta};
use crate::density::{DensityGrid, Grid};
use crate::error::{Error, Result};
use crate::estimator::FitConfig;
use crate::time::TimeIndex;

/// Tolerance on the coefficient constraints of a fitted model.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-10;

/// Densities of one variable observed `m` times per unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSeries {
    m: u32,
    grid: Grid,
    entries: BTreeMap<TimeIndex, DensityGrid>,
}

impl MixedSeries {
    pub fn new(m: u32, grid: Grid) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidSpec("frequency m must be positive".into()));
        }
        Ok(MixedSeries {
            m,
            grid,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, t: TimeIndex, density: DensityGrid) -> Result<()> {
        if *density.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        if !t.is_multiple_of(self.m) {
            return Err(Error::Schema(format!(
                "time {t} is not a multiple of 1/{} for this series",
                self.m
            )));
        }
        self.entries.insert(t, density);
        Ok(())
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn get(&self, t: &TimeIndex) -> Option<&DensityGrid> {
        self.entries.get(t)
    }

    pub fn entries(&self) -> &BTreeMap<TimeIndex, DensityGrid> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightFamily {
    Almon { q: usize },
    Unrestricted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    pub series_id: String,
    pub m: u32,
    pub p: usize,
    pub h: TimeIndex,
    pub weights: WeightFamily,
}

impl RegressorSpec {
    pub fn almon(series_id: impl Into<String>, m: u32, p: usize, h: TimeIndex, q: usize) -> Self {
        RegressorSpec {
            series_id: series_id.into(),
            m,
            p,
            h,
            weights: WeightFamily::Almon { q },
        }
    }

    pub fn unrestricted(series_id: impl Into<String>, m: u32, p: usize, h: TimeIndex) -> Self {
        RegressorSpec {
            series_id: series_id.into(),
            m,
            p,
            h,
            weights: WeightFamily::Unrestricted,
        }
    }

    /// Low-frequency regressor observed at the target times: `m = 1, h = 0, p = 1`.
    pub fn annual(series_id: impl Into<String>) -> Self {
        RegressorSpec::almon(series_id, 1, 1, TimeIndex::zero(), 1)
    }

    /// Degree of the Almon polynomial, zero for unrestricted weights.
    pub fn q(&self) -> usize {
        match self.weights {
            WeightFamily::Almon { q } => q,
            WeightFamily::Unrestricted => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.series_id.is_empty() {
            return Err(Error::InvalidSpec("series_id must be nonempty".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidSpec(format!("{}: m must be positive", self.series_id)));
        }
        if self.p == 0 {
            return Err(Error::InvalidSpec(format!("{}: p must be at least 1", self.series_id)));
        }
        if self.h.is_negative() {
            return Err(Error::InvalidSpec(format!("{}: h must be nonnegative", self.series_id)));
        }
        if let WeightFamily::Almon { q } = self.weights {
            AlmonSpec::new(q, self.p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Midas,
    Umidas,
    Ave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub regressors: Vec<RegressorSpec>,
}

impl ModelSpec {
    pub fn midas(regressors: Vec<RegressorSpec>) -> Self {
        ModelSpec {
            kind: ModelKind::Midas,
            regressors,
        }
    }

    pub fn umidas(regressors: Vec<RegressorSpec>) -> Self {
        ModelSpec {
            kind: ModelKind::Umidas,
            regressors,
        }
    }

    pub fn ave() -> Self {
        ModelSpec {
            kind: ModelKind::Ave,
            regressors: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Ave => {
                if !self.regressors.is_empty() {
                    return Err(Error::InvalidSpec("AVE takes no regressors".into()));
                }
                return Ok(());
            }
            _ if self.regressors.is_empty() => {
                return Err(Error::InvalidSpec("at least one regressor is required".into()))
            }
            _ => {}
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.regressors {
            r.validate()?;
            if !seen.insert(r.series_id.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate series_id `{}`", r.series_id)));
            }
            match (self.kind, r.weights) {
                (ModelKind::Midas, WeightFamily::Unrestricted) => {
                    return Err(Error::InvalidSpec(format!(
                        "{}: MIDAS needs Almon weights; unrestricted lags belong to UMIDAS",
                        r.series_id
                    )))
                }
                (ModelKind::Umidas, WeightFamily::Almon { .. }) if r.p > 1 => {
                    return Err(Error::InvalidSpec(format!(
                        "{}: UMIDAS regressors with p > 1 must use unrestricted weights",
                        r.series_id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Total number of lag columns `Σ p_k`.
    pub fn lag_count(&self) -> usize {
        self.regressors.iter().map(|r| r.p).sum()
    }

    /// Free parameters: `Σ q_k + K` for MIDAS; the coefficient count for UMIDAS.
    pub fn parameter_count(&self) -> usize {
        match self.kind {
            ModelKind::Midas => {
                self.regressors.iter().map(|r| r.q()).sum::<usize>() + self.regressors.len()
            }
            ModelKind::Umidas => self.lag_count(),
            ModelKind::Ave => 0,
        }
    }
}

/// Lagged densities `g_{t-h-i/m}`, `i = 1..p`, in increasing lag order.
pub fn resolve_lags<'a>(
    spec: &RegressorSpec,
    series: &'a MixedSeries,
    t: TimeIndex,
) -> Result<Vec<&'a DensityGrid>> {
    (1..=spec.p)
        .map(|lag| {
            let key = t.lagged(spec.h, lag, spec.m);
            series.get(&key).ok_or_else(|| Error::MissingLag {
                series: spec.series_id.clone(),
                target: t,
                lag,
                missing: key,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each outer iteration of the winning start.
    #[serde(default)]
    pub objective_trace: Vec<f64>,
    /// Per-start traces, in start order.
    #[serde(default)]
    pub start_traces: Vec<Vec<f64>>,
    #[serde(default)]
    pub singular_design: bool,
    #[serde(default)]
    pub line_search_stall: bool,
    #[serde(default)]
    pub usable_times: Vec<TimeIndex>,
}

impl Diagnostics {
    pub fn empty() -> Self {
        Diagnostics {
            objective_value: 0.0,
            iterations: 0,
            converged: true,
            objective_trace: Vec::new(),
            start_traces: Vec::new(),
            singular_design: false,
            line_search_stall: false,
            usable_times: Vec::new(),
        }
    }
}

/// Estimated parameters `Φ = (Θ_1..Θ_K, a_1..a_K)`.
///
/// For UMIDAS, regressors with unrestricted weights keep `a_k = 0` and an empty
/// `theta`; their lag coefficients are stored in order in `unrestricted_c`, and
/// `Σ a + Σ c = 1`. Regressors with `p = 1` carry their coefficient in `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub grid: Grid,
    pub theta: Vec<AlmonTheta>,
    pub a: Vec<f64>,
    pub unrestricted_c: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub fit_config: FitConfig,
}

impl FittedModel {
    /// An AVE "model" has no parameters; it only pins the grid.
    pub fn ave(grid: Grid) -> Self {
        FittedModel {
            spec: ModelSpec::ave(),
            grid,
            theta: Vec::new(),
            a: Vec::new(),
            unrestricted_c: None,
            diagnostics: Diagnostics::empty(),
            fit_config: FitConfig::default(),
        }
    }

    /// Builds a MIDAS model from known parameters, checking the simplex constraint.
    pub fn midas(spec: ModelSpec, grid: Grid, theta: Vec<AlmonTheta>, a: Vec<f64>) -> Result<Self> {
        let model = FittedModel {
            spec,
            grid,
            theta,
            a,
            unrestricted_c: None,
            diagnostics: Diagnostics::empty(),
            fit_config: FitConfig::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let k = self.spec.regressors.len();
        match self.spec.kind {
            ModelKind::Ave => Ok(()),
            ModelKind::Midas => {
                if self.a.len() != k || self.theta.len() != k {
                    return Err(Error::InvalidSpec(format!(
                        "MIDAS with {k} regressors needs {k} thetas and {k} combination weights"
                    )));
                }
                for (r, th) in self.spec.regressors.iter().zip(&self.theta) {
                    if th.len() != r.q() {
                        return Err(Error::InvalidSpec(format!(
                            "{}: theta has {} entries, expected {}",
                            r.series_id,
                            th.len(),
                            r.q()
                        )));
                    }
                }
                if self.a.iter().any(|a| *a < -CONSTRAINT_TOLERANCE || !a.is_finite()) {
                    return Err(Error::InvalidSpec("combination weights must be nonnegative".into()));
                }
                let total: f64 = self.a.iter().sum();
                if (total - 1.0).abs() > CONSTRAINT_TOLERANCE {
                    return Err(Error::InvalidSpec(format!(
                        "combination weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            ModelKind::Umidas => {
                let c = self.unrestricted_c.as_deref().unwrap_or(&[]);
                let expected: usize = self
                    .spec
                    .regressors
                    .iter()
                    .filter(|r| r.weights == WeightFamily::Unrestricted)
                    .map(|r| r.p)
                    .sum();
                if self.a.len() != k || c.len() != expected {
                    return Err(Error::InvalidSpec("UMIDAS coefficient layout mismatch".into()));
                }
                let total: f64 = self.a.iter().sum::<f64>() + c.iter().sum::<f64>();
                if (total - 1.0).abs() > CONSTRAINT_TOLERANCE {
                    return Err(Error::InvalidSpec(format!(
                        "UMIDAS coefficients sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Effective coefficient on every lag, `a_k · b(i, Θ_k)` for MIDAS; one vector per regressor.
    pub fn lag_coefficients(&self) -> Result<Vec<Vec<f64>>> {
        match self.spec.kind {
            ModelKind::Ave => Err(Error::InvalidSpec("AVE has no lag coefficients".into())),
            ModelKind::Midas => self
                .spec
                .regressors
                .iter()
                .zip(&self.theta)
                .zip(&self.a)
                .map(|((r, th), a)| {
                    let spec = AlmonSpec::new(r.q(), r.p)?;
                    Ok(almon::weights(&spec, th)?.into_iter().map(|b| a * b).collect())
                })
                .collect(),
            ModelKind::Umidas => {
                let c = self.unrestricted_c.as_deref().unwrap_or(&[]);
                let mut offset = 0;
                Ok(self
                    .spec
                    .regressors
                    .iter()
                    .zip(&self.a)
                    .map(|(r, a)| match r.weights {
                        WeightFamily::Unrestricted => {
                            let out = c[offset..offset + r.p].to_vec();
                            offset += r.p;
                            out
                        }
                        WeightFamily::Almon { .. } => vec![*a],
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub density: DensityGrid,
    /// Set when negative heights were clipped and the result renormalized.
    pub clipping_applied: bool,
}

/// Forecast `Σ_k a_k Σ_i b(i, Θ_k) g_{t-h-i/m_k, k}` at target time `t`.
pub fn predict(
    model: &FittedModel,
    regressor_data: &BTreeMap<String, MixedSeries>,
    t: TimeIndex,
) -> Result<Prediction> {
    if model.spec.kind == ModelKind::Ave {
        return Err(Error::InvalidSpec(
            "AVE predictions are built from the target history, use predict_ave".into(),
        ));
    }
    let coefficients = model.lag_coefficients()?;
    let mut values = vec![0.0; model.grid.n_points()];
    for (r, coefs) in model.spec.regressors.iter().zip(&coefficients) {
        let series = regressor_data
            .get(&r.series_id)
            .ok_or_else(|| Error::InvalidSpec(format!("no data for series `{}`", r.series_id)))?;
        if *series.grid() != model.grid {
            return Err(Error::GridMismatch);
        }
        for (g, c) in resolve_lags(r, series, t)?.into_iter().zip(coefs) {
            for (v, gv) in values.iter_mut().zip(g.values()) {
                *v += c * gv;
            }
        }
    }

    if model.spec.kind == ModelKind::Midas {
        // Convex combination of nonnegative heights; only rounding can go below zero.
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        return Ok(Prediction {
            density: DensityGrid::new(model.grid, values)?,
            clipping_applied: false,
        });
    }

    let clipped = values.iter().any(|v| *v < 0.0);
    if clipped {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        let density = DensityGrid::new(model.grid, values)?.normalized()?;
        return Ok(Prediction {
            density,
            clipping_applied: true,
        });
    }
    Ok(Prediction {
        density: DensityGrid::new(model.grid, values)?,
        clipping_applied: false,
    })
}

/// Pointwise mean of every observation strictly before `t`.
pub fn predict_ave(history: &BTreeMap<TimeIndex, DensityGrid>, t: TimeIndex) -> Result<DensityGrid> {
    let past: Vec<&DensityGrid> = history.range(..t).map(|(_, d)| d).collect();
    let first = past.first().ok_or(Error::EmptyHistory(t))?;
    let grid = *first.grid();
    let mut values = vec![0.0; grid.n_points()];
    for d in &past {
        if *d.grid() != grid {
            return Err(Error::GridMismatch);
        }
        for (v, x) in values.iter_mut().zip(d.values()) {
            *v += x;
        }
    }
    let n = past.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    DensityGrid::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::normal_pdf;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(-8.0, 12.0, 30).unwrap()
    }

    fn normal(mean: f64) -> DensityGrid {
        DensityGrid::from_fn(grid(), |x| normal_pdf(x, mean, 1.0)).unwrap()
    }

    fn t(n: i64, d: i64) -> TimeIndex {
        TimeIndex::new(n, d).unwrap()
    }

    #[test]
    fn resolve_lags_fractional_keys() {
        let spec = RegressorSpec::almon("g", 3, 3, t(1, 3), 1);
        let mut series = MixedSeries::new(3, grid()).unwrap();
        for (k, key) in [t(4, 3), t(1, 1), t(2, 3)].into_iter().enumerate() {
            series.insert(key, normal(k as f64)).unwrap();
        }
        let lags = resolve_lags(&spec, &series, TimeIndex::integer(2)).unwrap();
        assert_eq!(lags.len(), 3);
        assert_eq!(lags[0], &normal(0.0));
        assert_eq!(lags[2], &normal(2.0));
    }

    #[test]
    fn resolve_lags_annual_and_missing() {
        let spec = RegressorSpec::annual("h");
        let mut series = MixedSeries::new(1, grid()).unwrap();
        series.insert(TimeIndex::integer(4), normal(0.0)).unwrap();
        assert_eq!(resolve_lags(&spec, &series, TimeIndex::integer(5)).unwrap().len(), 1);
        match resolve_lags(&spec, &series, TimeIndex::integer(7)) {
            Err(Error::MissingLag { lag, missing, .. }) => {
                assert_eq!(lag, 1);
                assert_eq!(missing, TimeIndex::integer(6));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn series_rejects_off_lattice_keys_and_other_grids() {
        let mut s = MixedSeries::new(3, grid()).unwrap();
        assert!(s.insert(t(1, 2), normal(0.0)).is_err());
        let other = DensityGrid::from_fn(Grid::new(-1.0, 1.0, 30).unwrap(), |_| 0.5).unwrap();
        assert!(matches!(s.insert(t(1, 3), other), Err(Error::GridMismatch)));
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::midas(vec![]).validate().is_err());
        let u = RegressorSpec::unrestricted("g", 3, 4, TimeIndex::zero());
        assert!(ModelSpec::midas(vec![u.clone()]).validate().is_err());
        assert!(ModelSpec::umidas(vec![u, RegressorSpec::annual("h")]).validate().is_ok());
        let dup = RegressorSpec::annual("h");
        assert!(ModelSpec::midas(vec![dup.clone(), dup]).validate().is_err());
        let long_almon = RegressorSpec::almon("g", 3, 4, TimeIndex::zero(), 1);
        assert!(ModelSpec::umidas(vec![long_almon]).validate().is_err());
    }

    fn single_lag_data(means: &[f64]) -> BTreeMap<String, MixedSeries> {
        let mut data = BTreeMap::new();
        for (k, mean) in means.iter().enumerate() {
            let mut s = MixedSeries::new(1, grid()).unwrap();
            s.insert(TimeIndex::integer(0), normal(*mean)).unwrap();
            data.insert(format!("g{k}"), s);
        }
        data
    }

    #[test]
    fn single_lag_prediction_is_the_lag() {
        let spec = ModelSpec::midas(vec![RegressorSpec::annual("g0")]);
        let model = FittedModel::midas(spec, grid(), vec![AlmonTheta::zeros(1)], vec![1.0]).unwrap();
        let data = single_lag_data(&[1.5]);
        let pred = predict(&model, &data, TimeIndex::integer(1)).unwrap();
        assert_eq!(pred.density, normal(1.5));
        assert!(!pred.clipping_applied);
    }

    #[test]
    fn two_regressor_convex_combination() {
        let spec = ModelSpec::midas(vec![RegressorSpec::annual("g0"), RegressorSpec::annual("g1")]);
        let model = FittedModel::midas(
            spec,
            grid(),
            vec![AlmonTheta::zeros(1), AlmonTheta::zeros(1)],
            vec![0.4, 0.6],
        )
        .unwrap();
        let data = single_lag_data(&[0.0, 3.0]);
        let pred = predict(&model, &data, TimeIndex::integer(1)).unwrap();
        for (i, v) in pred.density.values().iter().enumerate() {
            let expected = 0.4 * normal(0.0).values()[i] + 0.6 * normal(3.0).values()[i];
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn midas_model_rejects_infeasible_weights() {
        let spec = ModelSpec::midas(vec![RegressorSpec::annual("g0"), RegressorSpec::annual("g1")]);
        let th = vec![AlmonTheta::zeros(1), AlmonTheta::zeros(1)];
        assert!(FittedModel::midas(spec.clone(), grid(), th.clone(), vec![0.5, 0.6]).is_err());
        assert!(FittedModel::midas(spec, grid(), th, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn umidas_clips_and_flags() {
        let spec = ModelSpec::umidas(vec![RegressorSpec::unrestricted("g0", 1, 2, TimeIndex::zero())]);
        let model = FittedModel {
            spec,
            grid: grid(),
            theta: vec![AlmonTheta(vec![])],
            a: vec![0.0],
            unrestricted_c: Some(vec![1.8, -0.8]),
            diagnostics: Diagnostics::empty(),
            fit_config: FitConfig::default(),
        };
        model.validate().unwrap();
        let mut s = MixedSeries::new(1, grid()).unwrap();
        s.insert(TimeIndex::integer(1), normal(0.0)).unwrap();
        s.insert(TimeIndex::integer(0), normal(2.0)).unwrap();
        let data = BTreeMap::from([("g0".to_string(), s)]);
        let pred = predict(&model, &data, TimeIndex::integer(2)).unwrap();
        assert!(pred.clipping_applied);
        assert!(pred.density.values().iter().all(|v| *v >= 0.0));
        assert_abs_diff_eq!(pred.density.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_reports_missing_lag_and_grid_mismatch() {
        let spec = ModelSpec::midas(vec![RegressorSpec::annual("g0")]);
        let model = FittedModel::midas(spec, grid(), vec![AlmonTheta::zeros(1)], vec![1.0]).unwrap();
        let data = single_lag_data(&[0.0]);
        assert!(matches!(
            predict(&model, &data, TimeIndex::integer(3)),
            Err(Error::MissingLag { .. })
        ));
        let other_grid = Grid::new(-8.0, 12.0, 31).unwrap();
        let wrong = FittedModel::midas(
            model.spec.clone(),
            other_grid,
            vec![AlmonTheta::zeros(1)],
            vec![1.0],
        )
        .unwrap();
        assert!(matches!(
            predict(&wrong, &data, TimeIndex::integer(1)),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn ave_prediction() {
        let mut history = BTreeMap::new();
        assert!(matches!(
            predict_ave(&history, TimeIndex::integer(1)),
            Err(Error::EmptyHistory(_))
        ));
        history.insert(TimeIndex::integer(1), normal(0.0));
        assert_eq!(predict_ave(&history, TimeIndex::integer(2)).unwrap(), normal(0.0));
        history.insert(TimeIndex::integer(3), normal(0.0));
        assert_eq!(predict_ave(&history, TimeIndex::integer(5)).unwrap(), normal(0.0));
        history.insert(TimeIndex::integer(4), normal(4.0));
        let avg = predict_ave(&history, TimeIndex::integer(5)).unwrap();
        assert_abs_diff_eq!(avg.mass(), 1.0, epsilon = 1e-9);
        // Observations at or after t are ignored.
        assert_eq!(predict_ave(&history, TimeIndex::integer(2)).unwrap(), normal(0.0));
    }

    proptest! {
        #[test]
        fn midas_prediction_has_unit_mass(
            means in prop::collection::vec(-2.0f64..4.0, 6),
            raw_a in prop::collection::vec(0.01f64..1.0, 2),
            theta in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let spec = ModelSpec::midas(vec![
                RegressorSpec::almon("g0", 3, 3, TimeIndex::zero(), 1),
                RegressorSpec::almon("g1", 3, 3, TimeIndex::zero(), 1),
            ]);
            let total: f64 = raw_a.iter().sum();
            let a: Vec<f64> = raw_a.iter().map(|x| x / total).collect();
            let model = FittedModel::midas(
                spec, grid(),
                vec![AlmonTheta(vec![theta[0]]), AlmonTheta(vec![theta[1]])], a,
            ).unwrap();
            let mut data = BTreeMap::new();
            for k in 0..2 {
                let mut s = MixedSeries::new(3, grid()).unwrap();
                for i in 1..=3 {
                    // Unit-mass inputs: renormalize the grid normal exactly.
                    let d = normal(means[3 * k + i - 1]).normalized().unwrap();
                    s.insert(TimeIndex::integer(1).lagged(TimeIndex::zero(), i, 3), d).unwrap();
                }
                data.insert(format!("g{k}"), s);
            }
            let pred = predict(&model, &data, TimeIndex::integer(1)).unwrap();
            prop_assert!(!pred.clipping_applied);
            prop_assert!((pred.density.mass() - 1.0).abs() <= 1e-10);

            // Reordering regressors does not change the forecast.
            let mut swapped = model.clone();
            swapped.spec.regressors.swap(0, 1);
            swapped.theta.swap(0, 1);
            swapped.a.swap(0, 1);
            let again = predict(&swapped, &data, TimeIndex::integer(1)).unwrap();
            for (x, y) in pred.density.values().iter().zip(again.density.values()) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }

        #[test]
        fn lag_keys_do_not_drift(start in 0i64..10_000) {
            let h = TimeIndex::new(1, 3).unwrap();
            let t = TimeIndex::integer(start);
            // Walking back one third at a time reaches the same exact key.
            let mut walked = t - h;
            for _ in 0..6 {
                walked = walked - TimeIndex::new(1, 3).unwrap();
            }
            prop_assert_eq!(t.lagged(h, 6, 3), walked);
            prop_assert_eq!(t.lagged(h, 6, 3), TimeIndex::new(3 * start - 7, 3).unwrap());
        }
    }
}
