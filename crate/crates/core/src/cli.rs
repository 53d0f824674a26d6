//! The `pdfmidas` command-line tool.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::density::{distance, moments, wasserstein1, DensityGrid, DistanceKind, Grid};
use crate::error::{Error, Result};
use crate::estimator::{aic_select, fit, TrainingSet};
use crate::inference::bootstrap_test;
use crate::io::{
    estimate_densities, fmt_num, pooled_grid, read_input, regressor_series, table_csv,
    training_set, write_atomic, write_grid_file, DensityTable, InputData, RunConfig,
};
use crate::model::{predict, predict_ave, FittedModel, ModelKind};
use crate::sim::{for_each_sample_set, run_study, truth_dataset, SimDesign, TARGET_ID};
use crate::time::TimeIndex;

#[derive(Debug, Parser)]
#[command(name = "pdfmidas", version, about = "Mixed-frequency density regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (default: `out_dir` from the config, else the current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a model from a panel or grid file.
    Fit {
        data: PathBuf,
        /// KDE grid as `LO,HI,N`.
        #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
        grid: Option<Grid>,
    },
    /// Forecast the target density at one time from a fitted model.
    Predict {
        /// `model.json` written by `fit`.
        model: PathBuf,
        data: PathBuf,
        /// Target time as `NUM/DEN` or an integer.
        #[arg(long)]
        at: TimeIndex,
        /// Grid file holding the true density at `--at`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run a Monte Carlo study from the `[simulation]` section.
    Simulate {
        /// Also write replication 0 as `panel.csv` and its true densities as `truth.csv`.
        #[arg(long)]
        emit_panel: bool,
    },
    /// Choose the lag length of the high-frequency regressors by AIC.
    SelectOrder {
        data: PathBuf,
        /// Candidate lag lengths as `LO:HI`.
        #[arg(long, value_parser = parse_range)]
        p_grid: (usize, usize),
        #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
        grid: Option<Grid>,
    },
    /// Fit, then run the residual bootstrap test on every coefficient.
    BootstrapTest {
        data: PathBuf,
        #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
        grid: Option<Grid>,
    },
}

fn parse_grid(raw: &str) -> std::result::Result<Grid, String> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let [lo, hi, n] = parts[..] else {
        return Err(format!("expected LO,HI,N, got `{raw}`"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("invalid LO `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("invalid HI `{hi}`"))?;
    let n: usize = n.parse().map_err(|_| format!("invalid N `{n}`"))?;
    Grid::new(lo, hi, n).map_err(|e| e.to_string())
}

fn parse_range(raw: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = raw
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got `{raw}`"))?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("invalid LO `{lo}`"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("invalid HI `{hi}`"))?;
    if lo == 0 || lo > hi {
        return Err(format!("need 1 <= LO <= HI, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// What `fit` stores: the estimates and the configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub model: FittedModel,
    pub config: RunConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Fit { data, grid } => run_fit(&config, &data, grid, &out),
        Command::Predict {
            model,
            data,
            at,
            truth,
        } => run_predict(cli.config.is_some().then_some(&config), cli.seed, &model, &data, at, truth.as_deref(), &out),
        Command::Simulate { emit_panel } => run_simulate(&config, cli.seed, emit_panel, &out),
        Command::SelectOrder { data, p_grid, grid } => run_select_order(&config, &data, p_grid, grid, &out),
        Command::BootstrapTest { data, grid } => run_bootstrap(&config, &data, grid, &out),
    }
}

/// Reads densities from a grid file, or estimates them from a panel.
///
/// `pinned` is the grid the densities must live on (the model grid when
/// predicting). Otherwise a panel is smoothed on `--grid`, the `[grid]`
/// section, or the pooled sample range, in that order.
fn load_densities(
    path: &Path,
    config: &RunConfig,
    grid_arg: Option<Grid>,
    pinned: Option<Grid>,
) -> Result<(Grid, DensityTable)> {
    match read_input(path)? {
        InputData::Densities { grid, table } => {
            if pinned.is_some_and(|p| p != grid) {
                return Err(Error::GridMismatch);
            }
            if grid_arg.is_some_and(|g| g != grid) {
                log::warn!("{} carries its own grid; --grid is ignored", path.display());
            }
            Ok((grid, table))
        }
        InputData::Samples(samples) => {
            let fallback = config.kde.fallback_bandwidth;
            let grid = match pinned.or(grid_arg) {
                Some(g) => g,
                None => match config.fixed_grid()? {
                    Some(g) => g,
                    None => pooled_grid(&samples, config.grid_points(), fallback)?,
                },
            };
            let table = estimate_densities(&samples, &grid, fallback)?;
            Ok((grid, table))
        }
    }
}

fn load_training(
    config: &RunConfig,
    path: &Path,
    grid_arg: Option<Grid>,
) -> Result<(DensityTable, TrainingSet)> {
    let spec = config.model_spec()?;
    let (grid, table) = load_densities(path, config, grid_arg, None)?;
    let mut data = training_set(&table, spec, grid)?;
    if let Some(end) = config.data.train_end {
        data = data.truncated(end);
        if data.targets().is_empty() {
            return Err(Error::NoUsableTimes(format!("no target time at or before {end}")));
        }
    }
    Ok((table, data))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn curves_csv(grid: &Grid, names: &[String], curves: &[&[f64]]) -> Result<Vec<u8>> {
    let mut head = vec!["s".to_string()];
    head.extend(names.iter().cloned());
    let rows = (0..grid.n_points()).map(|i| {
        let mut row = vec![fmt_num(grid.point(i))];
        row.extend(curves.iter().map(|c| fmt_num(c[i])));
        row
    });
    table_csv(&head, rows)
}

fn write_model(out: &Path, model: &FittedModel, config: &RunConfig) -> Result<()> {
    let file = ModelFile {
        model: model.clone(),
        config: config.clone(),
    };
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    write_atomic(&out.join("model.json"), json.as_bytes())
}

fn print_estimates(model: &FittedModel) {
    for (k, (r, theta)) in model.spec.regressors.iter().zip(&model.theta).enumerate() {
        if !theta.is_empty() {
            let parts: Vec<String> = theta.as_slice().iter().map(|v| fmt_num(*v)).collect();
            println!("theta_{}[{}]={}", k + 1, r.series_id, parts.join(","));
        }
    }
    for (k, (r, a)) in model.spec.regressors.iter().zip(&model.a).enumerate() {
        println!("a_{}[{}]={}", k + 1, r.series_id, fmt_num(*a));
    }
    if let Some(c) = &model.unrestricted_c {
        let parts: Vec<String> = c.iter().map(|v| fmt_num(*v)).collect();
        println!("c={}", parts.join(","));
    }
    println!("objective={}", fmt_num(model.diagnostics.objective_value));
    println!("converged={}", model.diagnostics.converged);
}

fn run_fit(config: &RunConfig, path: &Path, grid_arg: Option<Grid>, out: &Path) -> Result<()> {
    let spec = config.model_spec()?;
    let (table, data) = load_training(config, path, grid_arg)?;
    let grid = *data.grid();
    let model = fit(spec, &data, &config.fit)?;
    write_model(out, &model, config)?;

    let d = &model.diagnostics;
    let winner = d.start_traces.iter().position(|t| *t == d.objective_trace);
    let mut rows = Vec::new();
    for (s, trace) in d.start_traces.iter().enumerate() {
        for (i, q) in trace.iter().enumerate() {
            rows.push(vec![
                s.to_string(),
                (i + 1).to_string(),
                fmt_num(*q),
                (Some(s) == winner).to_string(),
            ]);
        }
    }
    write_atomic(
        &out.join("diagnostics.csv"),
        &table_csv(&header(&["start", "iteration", "objective", "selected"]), rows)?,
    )?;

    let rows = table
        .iter()
        .flat_map(|(id, series)| series.iter().map(move |(t, d)| (id.as_str(), *t, d)));
    write_grid_file(&out.join("densities.csv"), &grid, rows)?;

    let fitted: Vec<(TimeIndex, DensityGrid)> = if spec.kind == ModelKind::Ave {
        data.targets()
            .keys()
            .filter_map(|t| predict_ave(data.targets(), *t).ok().map(|d| (*t, d)))
            .collect()
    } else {
        d.usable_times
            .iter()
            .map(|t| Ok((*t, predict(&model, data.regressors(), *t)?.density)))
            .collect::<Result<_>>()?
    };
    write_grid_file(
        &out.join("fitted.csv"),
        &grid,
        fitted.iter().map(|(t, d)| ("fitted", *t, d)),
    )?;
    let names: Vec<String> = fitted.iter().map(|(t, _)| t.to_string()).collect();
    let curves: Vec<&[f64]> = fitted.iter().map(|(_, d)| d.values()).collect();
    write_atomic(&out.join("curves.csv"), &curves_csv(&grid, &names, &curves)?)?;

    print_estimates(&model);
    Ok(())
}

fn read_truth(path: &Path, grid: &Grid, at: TimeIndex) -> Result<DensityGrid> {
    let InputData::Densities { grid: g, table } = read_input(path)? else {
        return Err(Error::Schema(format!("{}: truth must be a grid file", path.display())));
    };
    if g != *grid {
        return Err(Error::GridMismatch);
    }
    if let Some(d) = table.get(TARGET_ID).and_then(|s| s.get(&at)) {
        return Ok(d.clone());
    }
    let mut at_time = table.values().filter_map(|s| s.get(&at));
    match (at_time.next(), at_time.next()) {
        (Some(d), None) => Ok(d.clone()),
        _ => Err(Error::Schema(format!(
            "{}: no `{TARGET_ID}` density at {at}",
            path.display()
        ))),
    }
}

fn mse(f: &DensityGrid, g: &DensityGrid) -> Result<f64> {
    Ok(distance(f, g, DistanceKind::L2)?.powi(2))
}

fn run_predict(
    override_config: Option<&RunConfig>,
    seed: Option<u64>,
    model_path: &Path,
    data_path: &Path,
    at: TimeIndex,
    truth_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let text = std::fs::read_to_string(model_path)
        .map_err(|e| Error::Schema(format!("{}: {e}", model_path.display())))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let model = file.model;
    model.validate()?;
    let mut config = override_config.cloned().unwrap_or(file.config);
    if let Some(seed) = seed {
        config.apply_seed(seed);
    }
    let grid = model.grid;
    let (_, table) = load_densities(data_path, &config, None, Some(grid))?;

    let history = table.get(TARGET_ID);
    let ave = match history.map(|h| predict_ave(h, at)) {
        Some(Ok(d)) => Some(d),
        Some(Err(e)) => {
            log::warn!("no AVE baseline: {e}");
            None
        }
        None => None,
    };
    let prediction = if model.spec.kind == ModelKind::Ave {
        ave.clone().ok_or(Error::EmptyHistory(at))?
    } else {
        let regressors = regressor_series(&table, &model.spec, grid)?;
        let p = predict(&model, &regressors, at)?;
        if p.clipping_applied {
            log::warn!("negative forecast heights were clipped and the density renormalized");
        }
        p.density
    };
    let truth = truth_path.map(|p| read_truth(p, &grid, at)).transpose()?;

    let mut named: Vec<(&str, &DensityGrid)> = vec![("prediction", &prediction)];
    if let Some(d) = &ave {
        named.push(("ave", d));
    }
    write_grid_file(
        &out.join("prediction.csv"),
        &grid,
        named.iter().map(|(n, d)| (*n, at, *d)),
    )?;
    if let Some(d) = &truth {
        named.push(("truth", d));
    }

    let mut rows = Vec::new();
    for (name, d) in &named {
        let m = moments(d)?;
        rows.push(vec![
            name.to_string(),
            fmt_num(m.mean),
            fmt_num(m.sd),
            fmt_num(m.q25),
            fmt_num(m.median),
            fmt_num(m.q75),
            fmt_num(m.skewness),
            fmt_num(m.excess_kurtosis),
        ]);
    }
    let head = header(&["model", "mean", "sd", "q25", "median", "q75", "skewness", "excess_kurtosis"]);
    write_atomic(&out.join("moments.csv"), &table_csv(&head, rows)?)?;

    if let Some(truth) = &truth {
        let mut rows = Vec::new();
        for (name, d) in named.iter().filter(|(n, _)| *n != "truth") {
            let (e, w) = (mse(d, truth)?, wasserstein1(d, truth)?);
            println!("{name}: mse={} wasserstein1={}", fmt_num(e), fmt_num(w));
            rows.push(vec![name.to_string(), fmt_num(e), fmt_num(w)]);
        }
        write_atomic(
            &out.join("metrics.csv"),
            &table_csv(&header(&["model", "mse", "wasserstein1"]), rows)?,
        )?;
    }

    let names: Vec<String> = named.iter().map(|(n, _)| n.to_string()).collect();
    let curves: Vec<&[f64]> = named.iter().map(|(_, d)| d.values()).collect();
    write_atomic(&out.join("curves.csv"), &curves_csv(&grid, &names, &curves)?)?;
    Ok(())
}

fn run_simulate(config: &RunConfig, seed: Option<u64>, emit_panel: bool, out: &Path) -> Result<()> {
    let mut design = config.simulation.clone().unwrap_or_default();
    if let Some(seed) = seed {
        design.seed = seed;
    }
    design.validate()?;
    let report = run_study(&design, &config.fit)?;
    if report.failures > 0 {
        log::warn!("{} of {} replications failed", report.failures, design.replications);
    }

    let mut head = header(&["T", "M", "p", "R", "statistic"]);
    head.extend(report.params.iter().map(|p| p.name.clone()));
    let fixed = [
        design.t.to_string(),
        design.m_samples.to_string(),
        design.regressors[0].p.to_string(),
        report.r_effective().to_string(),
    ];
    let rows = ["Bias", "SD", "RMSE"].map(|stat| {
        let mut row = fixed.to_vec();
        row.push(stat.to_string());
        row.extend(report.params.iter().map(|p| {
            fmt_num(match stat {
                "Bias" => p.bias,
                "SD" => p.sd,
                _ => p.rmse,
            })
        }));
        row
    });
    write_atomic(&out.join("report.csv"), &table_csv(&head, rows)?)?;
    for p in &report.params {
        println!(
            "{}: truth={} bias={} sd={} rmse={}",
            p.name,
            fmt_num(p.truth),
            fmt_num(p.bias),
            fmt_num(p.sd),
            fmt_num(p.rmse)
        );
    }

    if emit_panel {
        emit_replication_zero(&design, out)?;
    }
    Ok(())
}

fn emit_replication_zero(design: &SimDesign, out: &Path) -> Result<()> {
    let mut sets: Vec<(String, TimeIndex, Vec<f64>)> = Vec::new();
    for_each_sample_set(design, 0, |id, t, samples| {
        sets.push((id.to_string(), t, samples.observations().to_vec()));
        Ok(())
    })?;
    sets.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let panel = crate::io::panel_csv(sets.iter().map(|(id, t, xs)| (id.as_str(), *t, xs.as_slice())))?;
    write_atomic(&out.join("panel.csv"), &panel)?;

    let truth = truth_dataset(design)?;
    let grid = *truth.grid();
    let mut rows: Vec<(&str, TimeIndex, &DensityGrid)> = Vec::new();
    for (id, series) in truth.regressors() {
        rows.extend(series.entries().iter().map(|(t, d)| (id.as_str(), *t, d)));
    }
    rows.extend(truth.targets().iter().map(|(t, d)| (TARGET_ID, *t, d)));
    write_grid_file(&out.join("truth.csv"), &grid, rows)
}

fn run_select_order(
    config: &RunConfig,
    path: &Path,
    (lo, hi): (usize, usize),
    grid_arg: Option<Grid>,
    out: &Path,
) -> Result<()> {
    let spec = config.model_spec()?;
    let (_, data) = load_training(config, path, grid_arg)?;
    let candidates: Vec<usize> = (lo..=hi).collect();
    let selection = aic_select(spec, &data, &candidates, &config.fit)?;
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let rows = selection.candidates.iter().map(|c| {
        vec![
            c.p.to_string(),
            c.n_params.to_string(),
            opt(c.objective),
            opt(c.aic),
            selection.times.len().to_string(),
            (c.p == selection.chosen_p).to_string(),
            c.failure.clone().unwrap_or_default(),
        ]
    });
    let head = header(&["p", "n_params", "objective", "aic", "t_used", "chosen", "failure"]);
    write_atomic(&out.join("aic.csv"), &table_csv(&head, rows)?)?;
    println!("chosen_p={}", selection.chosen_p);
    Ok(())
}

fn run_bootstrap(config: &RunConfig, path: &Path, grid_arg: Option<Grid>, out: &Path) -> Result<()> {
    let spec = config.model_spec()?;
    let (_, data) = load_training(config, path, grid_arg)?;
    let model = fit(spec, &data, &config.fit)?;
    write_model(out, &model, config)?;
    let report = bootstrap_test(&model, &data, &config.bootstrap)?;

    let b_eff = report.b_effective().to_string();
    let rows = report.results.iter().map(|r| {
        vec![
            r.coefficient_id.clone(),
            fmt_num(r.estimate),
            fmt_num(r.p_value),
            b_eff.clone(),
            report.failures.to_string(),
            report.high_failure_rate.to_string(),
            report.base_converged.to_string(),
        ]
    });
    let head = header(&[
        "coefficient",
        "estimate",
        "p_value",
        "b_effective",
        "failures",
        "high_failure_rate",
        "base_converged",
    ]);
    write_atomic(&out.join("bootstrap.csv"), &table_csv(&head, rows)?)?;

    let mut head = vec!["replicate".to_string()];
    head.extend(report.results.iter().map(|r| r.coefficient_id.clone()));
    let rows = (0..report.b_effective()).map(|b| {
        let mut row = vec![b.to_string()];
        row.extend(report.results.iter().map(|r| fmt_num(r.replicate_estimates[b])));
        row
    });
    write_atomic(&out.join("replicates.csv"), &table_csv(&head, rows)?)?;

    for r in &report.results {
        println!(
            "{}: estimate={} p_value={}",
            r.coefficient_id,
            fmt_num(r.estimate),
            fmt_num(r.p_value)
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_argument_parses() {
        let g = parse_grid("-1.5, 2,7").unwrap();
        assert_eq!((g.lo(), g.hi(), g.n_points()), (-1.5, 2.0, 7));
        assert!(parse_grid("1,0,5").is_err());
        assert!(parse_grid("1,2").is_err());
    }

    #[test]
    fn range_argument_parses() {
        assert_eq!(parse_range("6:18").unwrap(), (6, 18));
        assert!(parse_range("0:3").is_err());
        assert!(parse_range("5:4").is_err());
        assert!(parse_range("5").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
