//! Least-squares estimation of PDF-MIDAS and PDF-UMIDAS models.
//!
//! MIDAS fits alternate between a BFGS step on the Almon parameters and an
//! exact simplex-constrained solve for the combination weights. With several
//! regressors the BFGS step minimizes the objective with the weights profiled
//! out (re-solved at every trial point); plain coordinate alternation
//! converges only linearly there. UMIDAS is a single linear solve.

mod bfgs;
pub(crate) mod design;
mod qp;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bfgs::{minimize, BfgsOptions, BfgsOutcome};
pub(crate) use design::Design;
pub use qp::{affine_lsq, simplex_lsq, LsqSolution, MAX_SIMPLEX_DIM};

use crate::almon::{softmax_jacobian, softmax_weights, AlmonTheta};
use crate::density::{DensityGrid, Grid};
use crate::error::{Error, Result};
use crate::model::{
    resolve_lags, Diagnostics, FittedModel, MixedSeries, ModelKind, ModelSpec, WeightFamily,
};
use crate::time::TimeIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_outer_iterations: usize,
    /// Stop alternating once the relative objective decrease falls below this.
    pub outer_tol: f64,
    pub bfgs_max_iter: usize,
    pub bfgs_grad_tol: f64,
    pub theta_init: Option<Vec<AlmonTheta>>,
    pub a_init: Option<Vec<f64>>,
    pub seed: u64,
    /// Random starts in addition to the deterministic one.
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_outer_iterations: 50,
            outer_tol: 1e-8,
            bfgs_max_iter: 200,
            bfgs_grad_tol: 1e-7,
            theta_init: None,
            a_init: None,
            seed: 0,
            restarts: 3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 || self.bfgs_max_iter == 0 {
            return Err(Error::InvalidConfig("iteration caps must be positive".into()));
        }
        if !(self.outer_tol >= 0.0) || !(self.bfgs_grad_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Target densities plus the regressor series, all on one grid.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    grid: Grid,
    targets: BTreeMap<TimeIndex, DensityGrid>,
    regressors: BTreeMap<String, MixedSeries>,
}

impl TrainingSet {
    pub fn new(
        targets: BTreeMap<TimeIndex, DensityGrid>,
        regressors: BTreeMap<String, MixedSeries>,
    ) -> Result<Self> {
        let grid = *targets
            .values()
            .next()
            .ok_or_else(|| Error::NoUsableTimes("no target densities".into()))?
            .grid();
        if targets.values().any(|d| *d.grid() != grid)
            || regressors.values().any(|s| *s.grid() != grid)
        {
            return Err(Error::GridMismatch);
        }
        Ok(TrainingSet {
            grid,
            targets,
            regressors,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn targets(&self) -> &BTreeMap<TimeIndex, DensityGrid> {
        &self.targets
    }

    pub fn regressors(&self) -> &BTreeMap<String, MixedSeries> {
        &self.regressors
    }

    pub fn series(&self, id: &str) -> Result<&MixedSeries> {
        self.regressors
            .get(id)
            .ok_or_else(|| Error::InvalidSpec(format!("no data for series `{id}`")))
    }

    /// Keeps only target times `≤ last`.
    pub fn truncated(&self, last: TimeIndex) -> TrainingSet {
        TrainingSet {
            grid: self.grid,
            targets: self.targets.range(..=last).map(|(t, d)| (*t, d.clone())).collect(),
            regressors: self.regressors.clone(),
        }
    }

    /// Target times at which every lag of every regressor is observed.
    pub fn usable_times(&self, spec: &ModelSpec) -> Result<Vec<TimeIndex>> {
        Ok(self.scan(spec)?.0)
    }

    /// Usable times plus the first missing-lag error encountered.
    fn scan(&self, spec: &ModelSpec) -> Result<(Vec<TimeIndex>, Option<Error>)> {
        let mut usable = Vec::new();
        let mut first_missing = None;
        for t in self.targets.keys() {
            let mut ok = true;
            for r in &spec.regressors {
                if let Err(e) = resolve_lags(r, self.series(&r.series_id)?, *t) {
                    ok = false;
                    first_missing.get_or_insert(e);
                    break;
                }
            }
            if ok {
                usable.push(*t);
            }
        }
        Ok((usable, first_missing))
    }

    fn usable_or_error(&self, spec: &ModelSpec) -> Result<Vec<TimeIndex>> {
        let (usable, missing) = self.scan(spec)?;
        if usable.is_empty() {
            return Err(match missing {
                Some(e) => Error::NoUsableTimes(format!("no target time has all lags; first gap: {e}")),
                None => Error::NoUsableTimes("no target densities".into()),
            });
        }
        Ok(usable)
    }
}

/// Which constraint the combination weights obey.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// `a ≥ 0`, `Σa = 1`.
    Simplex,
    /// `Σa = 1` only.
    Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ASolution {
    pub a: Vec<f64>,
    pub objective: f64,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSolution {
    pub theta: Vec<AlmonTheta>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
}

/// Precomputed design plus the block layout of one MIDAS specification.
struct Problem<'a> {
    spec: &'a ModelSpec,
    design: &'a Design,
}

impl Problem<'_> {
    fn theta_len(&self) -> usize {
        self.spec.regressors.iter().map(|r| r.q()).sum()
    }

    fn split_theta<'b>(&self, flat: &'b [f64]) -> Vec<&'b [f64]> {
        let mut out = Vec::with_capacity(self.spec.regressors.len());
        let mut pos = 0;
        for r in &self.spec.regressors {
            out.push(&flat[pos..pos + r.q()]);
            pos += r.q();
        }
        out
    }

    /// Lag weights for each regressor, `P × K` block-diagonal.
    fn weight_blocks(&self, theta: &[&[f64]]) -> DMatrix<f64> {
        let k = self.spec.regressors.len();
        let mut b = DMatrix::zeros(self.design.n_columns(), k);
        for (col, (r, th)) in self.spec.regressors.iter().zip(theta).enumerate() {
            let off = self.design.offsets[col];
            for (i, w) in softmax_weights(r.p, th).into_iter().enumerate() {
                b[(off + i, col)] = w;
            }
        }
        b
    }

    fn coefficients(&self, theta: &[&[f64]], a: &[f64]) -> DVector<f64> {
        self.weight_blocks(theta) * DVector::from_column_slice(a)
    }

    /// Chain rule from `∂Q/∂w` to `∂Q/∂Θ`.
    fn theta_gradient(&self, theta: &[&[f64]], a: &[f64], grad_w: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta_len());
        for (k, (r, th)) in self.spec.regressors.iter().zip(theta).enumerate() {
            let off = self.design.offsets[k];
            let jac = softmax_jacobian(r.p, th);
            for col in 0..r.q() {
                let mut acc = 0.0;
                for i in 0..r.p {
                    acc += grad_w[off + i] * jac[(i, col)];
                }
                out.push(a[k] * acc);
            }
        }
        out
    }

    fn value_and_grad(&self, flat: &[f64], a: &[f64]) -> (f64, Vec<f64>) {
        let theta = self.split_theta(flat);
        let w = self.coefficients(&theta, a);
        let (f, gw) = self.design.reduced_objective_grad(&w);
        (f, self.theta_gradient(&theta, a, &gw))
    }

    fn solve_a(&self, flat: &[f64], constraint: Constraint) -> Result<ASolution> {
        let theta = self.split_theta(flat);
        let a_mat = &self.design.r * self.weight_blocks(&theta);
        let b = &self.design.c;
        let sol = match constraint {
            Constraint::Simplex => qp::simplex_lsq(&a_mat, b)?,
            Constraint::Affine => qp::affine_lsq(&a_mat, b),
        };
        Ok(ASolution {
            a: sol.x.as_slice().to_vec(),
            objective: sol.residual_sq + self.design.rho * self.design.rho,
            singular: sol.singular,
        })
    }

    /// `min_a Q(Θ, a)` over the simplex and its gradient in `Θ`. The optimal
    /// weights are stationary on their face, so only the explicit `Θ`
    /// dependence contributes to the gradient.
    fn profiled_value_and_grad(&self, flat: &[f64]) -> (f64, Vec<f64>) {
        match self.solve_a(flat, Constraint::Simplex) {
            Ok(sol) => self.value_and_grad(flat, &sol.a),
            Err(_) => (f64::INFINITY, vec![0.0; flat.len()]),
        }
    }

    fn solve_theta(&self, a: &[f64], start: &[f64], config: &FitConfig) -> BfgsOutcome {
        bfgs::minimize(|x| self.value_and_grad(x, a), start, &bfgs_options(config))
    }

    fn solve_theta_profiled(&self, start: &[f64], config: &FitConfig) -> BfgsOutcome {
        bfgs::minimize(|x| self.profiled_value_and_grad(x), start, &bfgs_options(config))
    }
}

fn bfgs_options(config: &FitConfig) -> BfgsOptions {
    BfgsOptions {
        max_iter: config.bfgs_max_iter,
        grad_tol: config.bfgs_grad_tol,
        ..Default::default()
    }
}

/// Outcome of one alternating run from one starting point.
struct StartRun {
    theta: Vec<f64>,
    a: Vec<f64>,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    singular: bool,
    stalled: bool,
}

fn alternate(problem: &Problem, theta0: Vec<f64>, a0: Vec<f64>, config: &FitConfig) -> Result<StartRun> {
    let mut theta = theta0;
    let mut a = a0;
    let mut q_prev = problem.value_and_grad(&theta, &a).0;
    let mut run = StartRun {
        theta: theta.clone(),
        a: a.clone(),
        objective: q_prev,
        trace: vec![q_prev],
        iterations: 0,
        converged: false,
        singular: false,
        stalled: false,
    };
    for it in 1..=config.max_outer_iterations {
        // With one regressor the weights are fixed at 1 and both steps coincide.
        let bf = if a.len() == 1 {
            problem.solve_theta(&a, &theta, config)
        } else {
            problem.solve_theta_profiled(&theta, config)
        };
        run.stalled |= bf.stalled;
        let sol = problem.solve_a(&bf.x, Constraint::Simplex)?;
        run.singular |= sol.singular;
        let q = sol.objective;
        run.trace.push(q);
        run.iterations = it;
        if !q.is_finite() {
            return Err(Error::Numerical("objective became non-finite".into()));
        }
        if q > q_prev * (1.0 + 1e-12) {
            // Only rounding can raise the objective; keep the previous iterate.
            run.converged = true;
            break;
        }
        theta = bf.x;
        a = sol.a;
        run.theta = theta.clone();
        run.a = a.clone();
        run.objective = q;
        let rel = if q_prev > 0.0 { (q_prev - q) / q_prev } else { 0.0 };
        q_prev = q;
        if rel < config.outer_tol || q == 0.0 {
            run.converged = true;
            break;
        }
    }
    Ok(run)
}

fn check_identifiable(spec: &ModelSpec, design: &Design) -> Result<()> {
    let equations = design.times.len() * design.n_points;
    let parameters = spec.parameter_count();
    if equations < parameters {
        return Err(Error::NotIdentifiable {
            equations,
            parameters,
        });
    }
    Ok(())
}

fn starting_points(spec: &ModelSpec, config: &FitConfig) -> Result<Vec<Vec<f64>>> {
    let q_total: usize = spec.regressors.iter().map(|r| r.q()).sum();
    let first = match &config.theta_init {
        Some(init) => {
            if init.len() != spec.regressors.len()
                || init.iter().zip(&spec.regressors).any(|(t, r)| t.len() != r.q())
            {
                return Err(Error::InvalidConfig(
                    "theta_init must have one entry of length q per regressor".into(),
                ));
            }
            init.iter().flat_map(|t| t.as_slice().iter().copied()).collect()
        }
        None => vec![0.0; q_total],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![first];
    for _ in 0..config.restarts {
        starts.push((0..q_total).map(|_| rng.gen_range(-0.5..=0.5)).collect());
    }
    Ok(starts)
}

fn initial_a(spec: &ModelSpec, config: &FitConfig) -> Result<Vec<f64>> {
    let k = spec.regressors.len();
    match &config.a_init {
        Some(a) => {
            let total: f64 = a.iter().sum();
            if a.len() != k || a.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidConfig(
                    "a_init must be a probability vector with one entry per regressor".into(),
                ));
            }
            Ok(a.clone())
        }
        None => Ok(vec![1.0 / k as f64; k]),
    }
}

fn unflatten(spec: &ModelSpec, flat: &[f64]) -> Vec<AlmonTheta> {
    let mut pos = 0;
    spec.regressors
        .iter()
        .map(|r| {
            let th = AlmonTheta(flat[pos..pos + r.q()].to_vec());
            pos += r.q();
            th
        })
        .collect()
}

fn flatten(theta: &[AlmonTheta]) -> Vec<f64> {
    theta.iter().flat_map(|t| t.as_slice().iter().copied()).collect()
}

fn fit_midas(spec: &ModelSpec, design: &Design, grid: Grid, config: &FitConfig) -> Result<FittedModel> {
    if spec.regressors.len() > MAX_SIMPLEX_DIM {
        return Err(Error::InvalidSpec(format!(
            "at most {MAX_SIMPLEX_DIM} regressors are supported"
        )));
    }
    let problem = Problem { spec, design };
    let a0 = initial_a(spec, config)?;
    let mut best: Option<StartRun> = None;
    let mut traces = Vec::new();
    for start in starting_points(spec, config)? {
        let run = alternate(&problem, start, a0.clone(), config)?;
        traces.push(run.trace.clone());
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let theta_split = problem.split_theta(&best.theta);
    let w = problem.coefficients(&theta_split, &best.a);
    let diagnostics = Diagnostics {
        objective_value: design.direct_objective(&w),
        iterations: best.iterations,
        converged: best.converged,
        objective_trace: best.trace,
        start_traces: traces,
        singular_design: best.singular,
        line_search_stall: best.stalled,
        usable_times: design.times.clone(),
    };
    let model = FittedModel {
        spec: spec.clone(),
        grid,
        theta: unflatten(spec, &best.theta),
        a: best.a,
        unrestricted_c: None,
        diagnostics,
        fit_config: config.clone(),
    };
    model.validate()?;
    Ok(model)
}

fn fit_umidas(spec: &ModelSpec, design: &Design, grid: Grid, config: &FitConfig) -> Result<FittedModel> {
    let sol = qp::affine_lsq(&design.r, &design.c);
    let w = sol.x;
    let mut a = Vec::with_capacity(spec.regressors.len());
    let mut theta = Vec::with_capacity(spec.regressors.len());
    let mut c = Vec::new();
    for (r, off) in spec.regressors.iter().zip(&design.offsets) {
        match r.weights {
            WeightFamily::Unrestricted => {
                a.push(0.0);
                theta.push(AlmonTheta(Vec::new()));
                c.extend_from_slice(&w.as_slice()[*off..off + r.p]);
            }
            WeightFamily::Almon { q } => {
                a.push(w[*off]);
                theta.push(AlmonTheta::zeros(q));
            }
        }
    }
    let objective = design.direct_objective(&w);
    let model = FittedModel {
        spec: spec.clone(),
        grid,
        theta,
        a,
        unrestricted_c: if c.is_empty() { None } else { Some(c) },
        diagnostics: Diagnostics {
            objective_value: objective,
            iterations: 1,
            converged: true,
            objective_trace: vec![objective],
            start_traces: Vec::new(),
            singular_design: sol.singular,
            line_search_stall: false,
            usable_times: design.times.clone(),
        },
        fit_config: config.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Fits `spec` on a prepared design.
pub(crate) fn fit_design(
    spec: &ModelSpec,
    design: &Design,
    grid: Grid,
    config: &FitConfig,
) -> Result<FittedModel> {
    spec.validate()?;
    config.validate()?;
    check_identifiable(spec, design)?;
    match spec.kind {
        ModelKind::Ave => Ok(FittedModel::ave(grid)),
        ModelKind::Midas => fit_midas(spec, design, grid, config),
        ModelKind::Umidas => fit_umidas(spec, design, grid, config),
    }
}

pub(crate) fn build_design(spec: &ModelSpec, data: &TrainingSet) -> Result<Design> {
    spec.validate()?;
    let times = data.usable_or_error(spec)?;
    let equations = times.len() * data.grid().n_points();
    if equations < spec.parameter_count() {
        return Err(Error::NotIdentifiable {
            equations,
            parameters: spec.parameter_count(),
        });
    }
    Design::build(spec, data, &times)
}

/// Minimizes `Q = Σ_t Σ_i (f_t(s_i) − f̂_t(s_i))² Δs` over the usable target times.
pub fn fit(spec: &ModelSpec, data: &TrainingSet, config: &FitConfig) -> Result<FittedModel> {
    if spec.kind == ModelKind::Ave {
        spec.validate()?;
        return Ok(FittedModel::ave(*data.grid()));
    }
    let design = build_design(spec, data)?;
    fit_design(spec, &design, *data.grid(), config)
}

/// The least-squares objective `Q` of `model` on every usable target time of `data`.
pub fn objective(model: &FittedModel, data: &TrainingSet) -> Result<f64> {
    let design = build_design(&model.spec, data)?;
    let w: Vec<f64> = model.lag_coefficients()?.into_iter().flatten().collect();
    Ok(design.direct_objective(&DVector::from_vec(w)))
}

/// Gradient of [`objective`] with respect to the stacked Almon parameters.
pub fn objective_gradient(model: &FittedModel, data: &TrainingSet) -> Result<Vec<f64>> {
    if model.spec.kind != ModelKind::Midas {
        return Err(Error::InvalidSpec("gradient is defined for MIDAS models".into()));
    }
    let design = build_design(&model.spec, data)?;
    let problem = Problem {
        spec: &model.spec,
        design: &design,
    };
    let flat = flatten(&model.theta);
    let theta = problem.split_theta(&flat);
    let w = problem.coefficients(&theta, &model.a);
    let gw = design.direct_gradient(&w);
    Ok(problem.theta_gradient(&theta, &model.a, &gw))
}

/// Optimal combination weights for fixed Almon parameters.
pub fn solve_a(
    spec: &ModelSpec,
    theta: &[AlmonTheta],
    data: &TrainingSet,
    constraint: Constraint,
) -> Result<ASolution> {
    if spec.kind != ModelKind::Midas {
        return Err(Error::InvalidSpec("solve_a applies to MIDAS specifications".into()));
    }
    let design = build_design(spec, data)?;
    let problem = Problem {
        spec,
        design: &design,
    };
    if theta.len() != spec.regressors.len() {
        return Err(Error::InvalidSpec("one theta per regressor is required".into()));
    }
    problem.solve_a(&flatten(theta), constraint)
}

/// Optimal Almon parameters for fixed combination weights, by BFGS from `start`.
pub fn solve_theta(
    spec: &ModelSpec,
    a: &[f64],
    start: &[AlmonTheta],
    data: &TrainingSet,
    config: &FitConfig,
) -> Result<ThetaSolution> {
    if spec.kind != ModelKind::Midas {
        return Err(Error::InvalidSpec("solve_theta applies to MIDAS specifications".into()));
    }
    if a.len() != spec.regressors.len() || start.len() != spec.regressors.len() {
        return Err(Error::InvalidSpec("one weight and one theta per regressor are required".into()));
    }
    let design = build_design(spec, data)?;
    let problem = Problem {
        spec,
        design: &design,
    };
    let out = problem.solve_theta(a, &flatten(start), config);
    Ok(ThetaSolution {
        theta: unflatten(spec, &out.x),
        objective: out.f,
        iterations: out.iterations,
        converged: out.converged,
        stalled: out.stalled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicCandidate {
    pub p: usize,
    pub n_params: usize,
    pub objective: Option<f64>,
    pub aic: Option<f64>,
    /// Why the candidate could not be fitted, if it failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AicSelection {
    pub chosen_p: usize,
    pub candidates: Vec<AicCandidate>,
    /// Target times shared by every candidate.
    pub times: Vec<TimeIndex>,
}

/// `2K + T ln(Q/T)`.
pub fn aic(n_params: usize, objective: f64, t: usize) -> f64 {
    let t = t as f64;
    2.0 * n_params as f64 + t * (objective / t).ln()
}

/// Chooses the lag length of every high-frequency regressor (`m > 1`) by AIC.
///
/// All candidates are compared on the target times usable under every
/// candidate, so the objectives are sums over the same equations.
pub fn aic_select(
    template: &ModelSpec,
    data: &TrainingSet,
    p_candidates: &[usize],
    config: &FitConfig,
) -> Result<AicSelection> {
    if !template.regressors.iter().any(|r| r.m > 1) {
        return Err(Error::InvalidSpec(
            "lag selection needs at least one regressor with m > 1".into(),
        ));
    }
    if p_candidates.is_empty() {
        return Err(Error::InvalidConfig("no lag candidates given".into()));
    }
    let specs: Vec<(usize, Result<ModelSpec>)> = p_candidates
        .iter()
        .map(|&p| {
            let mut spec = template.clone();
            for r in spec.regressors.iter_mut().filter(|r| r.m > 1) {
                r.p = p;
            }
            let checked = spec.validate().map(|_| spec);
            (p, checked)
        })
        .collect();

    let mut common: Option<Vec<TimeIndex>> = None;
    for (_, spec) in &specs {
        if let Ok(spec) = spec {
            let times = data.usable_times(spec)?;
            common = Some(match common {
                None => times,
                Some(prev) => prev.into_iter().filter(|t| times.binary_search(t).is_ok()).collect(),
            });
        }
    }
    let times = common.unwrap_or_default();
    if times.is_empty() {
        return Err(Error::NoUsableTimes(
            "no target time has every lag of every candidate".into(),
        ));
    }

    let mut candidates = Vec::with_capacity(specs.len());
    for (p, spec) in specs {
        let fitted = spec.and_then(|spec| {
            let design = Design::build(&spec, data, &times)?;
            let model = fit_design(&spec, &design, *data.grid(), config)?;
            Ok((spec.parameter_count(), model.diagnostics.objective_value))
        });
        candidates.push(match fitted {
            Ok((k, q)) => AicCandidate {
                p,
                n_params: k,
                objective: Some(q),
                aic: Some(aic(k, q, times.len())),
                failure: None,
            },
            Err(e) => {
                log::warn!("lag candidate p = {p} failed: {e}");
                AicCandidate {
                    p,
                    n_params: 0,
                    objective: None,
                    aic: None,
                    failure: Some(e.to_string()),
                }
            }
        });
    }

    let chosen = candidates
        .iter()
        .filter_map(|c| c.aic.map(|v| (c.p, v)))
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
        .ok_or_else(|| Error::Numerical("every lag candidate failed to fit".into()))?;
    Ok(AicSelection {
        chosen_p: chosen.0,
        candidates,
        times,
    })
}
