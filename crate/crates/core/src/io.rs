//! Run configuration, panel and grid CSV files, and atomic output writes.
//!
//! A panel file holds raw observations, one per row:
//! `series_id,time_num,time_den,value`. A grid file holds densities, one per
//! row: `series_id,time_num,time_den,s_1,..,s_N`, with the grid stored in a
//! `<stem>.grid.json` sidecar. The format is detected from the header.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{bandwidth, kde_values, DensityGrid, Grid, SampleSet};
use crate::error::{Error, Result};
use crate::estimator::{FitConfig, TrainingSet};
use crate::inference::BootstrapConfig;
use crate::model::{MixedSeries, ModelSpec};
use crate::sim::{SimDesign, TARGET_ID};
use crate::time::TimeIndex;

/// Grid points used when neither the config nor the command line sets them.
pub const DEFAULT_GRID_POINTS: usize = 30;
/// Bandwidths of padding on each side of the pooled sample range.
const GRID_PADDING_BANDWIDTHS: f64 = 3.0;
/// A KDE mass below this on the chosen grid is reported as a warning.
const LOW_MASS_WARNING: f64 = 0.99;

const PANEL_HEADER: [&str; 4] = ["series_id", "time_num", "time_den", "value"];
const KEY_COLUMNS: [&str; 3] = ["series_id", "time_num", "time_den"];

pub type SampleTable = BTreeMap<String, BTreeMap<TimeIndex, Vec<f64>>>;
pub type DensityTable = BTreeMap<String, BTreeMap<TimeIndex, DensityGrid>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub n_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeConfig {
    /// Bandwidth used for samples with zero spread.
    pub fallback_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Last target time used for estimation.
    pub train_end: Option<TimeIndex>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the fit, bootstrap and simulation seeds when set.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub grid: GridConfig,
    pub kde: KdeConfig,
    pub model: Option<ModelSpec>,
    pub fit: FitConfig,
    pub bootstrap: BootstrapConfig,
    pub data: DataConfig,
    pub simulation: Option<SimDesign>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if let Some(seed) = config.seed {
            config.apply_seed(seed);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.fit.seed = seed;
        self.bootstrap.seed = seed;
        if let Some(sim) = self.simulation.as_mut() {
            sim.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.bootstrap.validate()?;
        if self.grid.lo.is_some() != self.grid.hi.is_some() {
            return Err(Error::InvalidConfig("[grid] needs both lo and hi, or neither".into()));
        }
        if let (Some(lo), Some(hi)) = (self.grid.lo, self.grid.hi) {
            Grid::new(lo, hi, self.grid.n_points.unwrap_or(DEFAULT_GRID_POINTS))?;
        }
        if matches!(self.grid.n_points, Some(n) if n < 2) {
            return Err(Error::InvalidConfig("[grid] n_points must be at least 2".into()));
        }
        if let Some(bw) = self.kde.fallback_bandwidth {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fallback_bandwidth must be positive, got {bw}"
                )));
            }
        }
        if let Some(model) = &self.model {
            model.validate()?;
        }
        if let Some(sim) = &self.simulation {
            sim.validate()?;
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<&ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing [model] section".into()))
    }

    /// The fixed grid from `[grid]`, if `lo` and `hi` are both set.
    pub fn fixed_grid(&self) -> Result<Option<Grid>> {
        match (self.grid.lo, self.grid.hi) {
            (Some(lo), Some(hi)) => Ok(Some(Grid::new(
                lo,
                hi,
                self.grid.n_points.unwrap_or(DEFAULT_GRID_POINTS),
            )?)),
            _ => Ok(None),
        }
    }

    pub fn grid_points(&self) -> usize {
        self.grid.n_points.unwrap_or(DEFAULT_GRID_POINTS)
    }
}

/// Contents of an input file, by detected format.
#[derive(Debug, Clone)]
pub enum InputData {
    Samples(SampleTable),
    Densities { grid: Grid, table: DensityTable },
}

/// `data.csv` -> `data.grid.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("grid.json")
}

pub fn read_input(path: &Path) -> Result<InputData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    check_key_columns(&header)?;
    match header.get(3).map(String::as_str) {
        Some("value") => {
            if header.len() != PANEL_HEADER.len() {
                return Err(Error::Schema(format!(
                    "panel header has {} columns, expected {}",
                    header.len(),
                    PANEL_HEADER.join(",")
                )));
            }
            Ok(InputData::Samples(read_panel_rows(&mut reader)?))
        }
        Some(_) => {
            for (j, name) in header.iter().enumerate().skip(3) {
                let expected = format!("s_{}", j - 2);
                if *name != expected {
                    return Err(Error::Schema(format!(
                        "column {} is `{name}`, expected `{expected}`",
                        j + 1
                    )));
                }
            }
            let grid = read_sidecar(&sidecar_path(path))?;
            if grid.n_points() != header.len() - 3 {
                return Err(Error::Schema(format!(
                    "sidecar grid has {} points but the file has {} density columns",
                    grid.n_points(),
                    header.len() - 3
                )));
            }
            let table = read_grid_rows(&mut reader, grid)?;
            Ok(InputData::Densities { grid, table })
        }
        None => Err(Error::Schema(
            "missing column 4: expected `value` (panel) or `s_1` (grid)".into(),
        )),
    }
}

fn check_key_columns(header: &[String]) -> Result<()> {
    for (j, expected) in KEY_COLUMNS.iter().enumerate() {
        match header.get(j) {
            Some(name) if name == expected => {}
            Some(name) => {
                return Err(Error::Schema(format!(
                    "column {} is `{name}`, expected `{expected}`",
                    j + 1
                )))
            }
            None => return Err(Error::Schema(format!("missing column `{expected}`"))),
        }
    }
    Ok(())
}

fn read_sidecar(path: &Path) -> Result<Grid> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("grid sidecar {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("grid sidecar {}: {e}", path.display())))
}

fn field<'a>(record: &'a csv::StringRecord, j: usize, name: &str) -> Result<&'a str> {
    record.get(j).ok_or_else(|| Error::Schema(format!("{}: missing `{name}`", line(record))))
}

fn line(record: &csv::StringRecord) -> String {
    record
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "record".into())
}

fn parse_key(record: &csv::StringRecord) -> Result<(String, TimeIndex)> {
    let id = field(record, 0, "series_id")?.trim();
    if id.is_empty() {
        return Err(Error::Schema(format!("{}: column `series_id` is empty", line(record))));
    }
    let int = |j: usize, name: &str| -> Result<i64> {
        let raw = field(record, j, name)?.trim();
        raw.parse().map_err(|_| {
            Error::Schema(format!("{}: column `{name}`: invalid integer `{raw}`", line(record)))
        })
    };
    let num = int(1, "time_num")?;
    let den = int(2, "time_den")?;
    if den <= 0 {
        return Err(Error::Schema(format!(
            "{}: column `time_den` must be positive, got {den}",
            line(record)
        )));
    }
    Ok((id.to_string(), TimeIndex::new(num, den)?))
}

fn parse_number(record: &csv::StringRecord, j: usize, name: &str) -> Result<f64> {
    let raw = field(record, j, name)?.trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Schema(format!(
            "{}: column `{name}`: invalid number `{raw}`",
            line(record)
        ))),
    }
}

fn read_panel_rows<R: std::io::Read>(reader: &mut csv::Reader<R>) -> Result<SampleTable> {
    let mut table = SampleTable::new();
    for record in reader.records() {
        let record = record?;
        let (id, t) = parse_key(&record)?;
        let value = parse_number(&record, 3, "value")?;
        table.entry(id).or_default().entry(t).or_default().push(value);
    }
    if table.is_empty() {
        return Err(Error::Schema("panel file has no rows".into()));
    }
    Ok(table)
}

fn read_grid_rows<R: std::io::Read>(reader: &mut csv::Reader<R>, grid: Grid) -> Result<DensityTable> {
    let mut table = DensityTable::new();
    for record in reader.records() {
        let record = record?;
        let (id, t) = parse_key(&record)?;
        let values = (0..grid.n_points())
            .map(|i| parse_number(&record, i + 3, &format!("s_{}", i + 1)))
            .collect::<Result<Vec<f64>>>()?;
        let density = DensityGrid::new(grid, values)
            .map_err(|e| Error::Schema(format!("{}: {e}", line(&record))))?;
        if table.entry(id.clone()).or_default().insert(t, density).is_some() {
            return Err(Error::Schema(format!(
                "{}: duplicate density for series `{id}` at {t}",
                line(&record)
            )));
        }
    }
    if table.is_empty() {
        return Err(Error::Schema("grid file has no rows".into()));
    }
    Ok(table)
}

fn sample_bandwidth(samples: &SampleSet, fallback: Option<f64>) -> Result<f64> {
    match bandwidth(samples) {
        Err(Error::DegenerateSample) | Err(Error::InvalidSample(_)) if fallback.is_some() => {
            Ok(fallback.expect("checked"))
        }
        other => other,
    }
}

fn flatten(samples: &SampleTable) -> Result<Vec<(&str, TimeIndex, SampleSet)>> {
    let mut out = Vec::new();
    for (id, series) in samples {
        for (t, xs) in series {
            out.push((id.as_str(), *t, SampleSet::new(xs.clone())?));
        }
    }
    Ok(out)
}

/// `[min − 3 l_max, max + 3 l_max]` over every observation of every series,
/// where `l_max` is the largest rule-of-thumb bandwidth.
pub fn pooled_grid(samples: &SampleTable, n_points: usize, fallback: Option<f64>) -> Result<Grid> {
    let sets = flatten(samples)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut l_max: f64 = 0.0;
    for (_, _, set) in &sets {
        lo = lo.min(set.min());
        hi = hi.max(set.max());
        l_max = l_max.max(sample_bandwidth(set, fallback)?);
    }
    Grid::new(
        lo - GRID_PADDING_BANDWIDTHS * l_max,
        hi + GRID_PADDING_BANDWIDTHS * l_max,
        n_points,
    )
}

/// Kernel density estimate of every sample set on `grid`.
pub fn estimate_densities(
    samples: &SampleTable,
    grid: &Grid,
    fallback: Option<f64>,
) -> Result<DensityTable> {
    let sets = flatten(samples)?;
    let estimated: Vec<Result<(&str, TimeIndex, DensityGrid)>> = sets
        .par_iter()
        .map(|(id, t, set)| {
            let bw = sample_bandwidth(set, fallback)?;
            Ok((*id, *t, DensityGrid::new(*grid, kde_values(set, grid, bw)?)?))
        })
        .collect();
    let mut table = DensityTable::new();
    let mut low_mass = 0;
    for item in estimated {
        let (id, t, density) = item?;
        if density.mass() < LOW_MASS_WARNING {
            low_mass += 1;
        }
        table.entry(id.to_string()).or_default().insert(t, density);
    }
    if low_mass > 0 {
        log::warn!("{low_mass} density estimates keep less than {LOW_MASS_WARNING} of their mass on the grid");
    }
    Ok(table)
}

/// One series per regressor of `spec`, built from the rows of its `series_id`.
pub fn regressor_series(
    table: &DensityTable,
    spec: &ModelSpec,
    grid: Grid,
) -> Result<BTreeMap<String, MixedSeries>> {
    let mut regressors = BTreeMap::new();
    for r in &spec.regressors {
        if regressors.contains_key(&r.series_id) {
            continue;
        }
        let rows = table
            .get(&r.series_id)
            .ok_or_else(|| Error::InvalidSpec(format!("no rows for series `{}`", r.series_id)))?;
        let mut series = MixedSeries::new(r.m, grid)?;
        for (t, d) in rows {
            series.insert(*t, d.clone())?;
        }
        regressors.insert(r.series_id.clone(), series);
    }
    Ok(regressors)
}

/// Targets come from series `target`; every regressor of `spec` needs its series.
pub fn training_set(table: &DensityTable, spec: &ModelSpec, grid: Grid) -> Result<TrainingSet> {
    let targets = table
        .get(TARGET_ID)
        .ok_or_else(|| Error::Schema(format!("no rows for series `{TARGET_ID}`")))?
        .clone();
    TrainingSet::new(targets, regressor_series(table, spec, grid)?)
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn to_bytes(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Generic CSV from a header and stringified rows.
pub fn table_csv<I, R>(header: &[String], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    to_bytes(writer)
}

pub fn panel_csv<'a, I>(rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, TimeIndex, &'a [f64])>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(PANEL_HEADER)?;
    for (id, t, values) in rows {
        let (num, den) = (t.numer().to_string(), t.denom().to_string());
        for v in values {
            writer.write_record([id, &num, &den, &fmt_num(*v)])?;
        }
    }
    to_bytes(writer)
}

pub fn grid_csv<'a, I>(grid: &Grid, rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, TimeIndex, &'a DensityGrid)>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=grid.n_points()).map(|i| format!("s_{i}")));
    writer.write_record(&header)?;
    for (id, t, density) in rows {
        if density.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let mut record = vec![id.to_string(), t.numer().to_string(), t.denom().to_string()];
        record.extend(density.values().iter().map(|v| fmt_num(*v)));
        writer.write_record(&record)?;
    }
    to_bytes(writer)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Grid CSV plus its sidecar.
pub fn write_grid_file<'a, I>(path: &Path, grid: &Grid, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, TimeIndex, &'a DensityGrid)>,
{
    let csv = grid_csv(grid, rows)?;
    let sidecar = serde_json::to_string_pretty(grid)?;
    write_atomic(&sidecar_path(path), sidecar.as_bytes())?;
    write_atomic(path, &csv)
}
