//! CSV schemas shared by the `simulate`, `estimate` and `test` commands.
//!
//! | file | columns |
//! |------|---------|
//! | `units.csv` | `unit_id, x1, …, xd` |
//! | `quantiles.csv` | `unit_id, s, q` (any row order) |
//! | `edges.csv` | `i, j` or `i, j, w` (unit ids) |
//! | `sizes.csv` | `unit_id, size` |
//! | `sample.csv` | `unit_id, t, value` |
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use crate::error::{HarnessError, Result};
use fsar::estimator::CurveEstimate;
use fsar::funcspace::{DiscreteFunctionObservations, FunctionalSample};
use fsar::inference::WaldResult;
use fsar::spatial::SpatialWeights;
use fsar::Matrix;
use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

pub const UNITS_FILE: &str = "units.csv";
pub const QUANTILES_FILE: &str = "quantiles.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const SIZES_FILE: &str = "sizes.csv";
pub const SAMPLE_FILE: &str = "sample.csv";
pub const BETA_FILE: &str = "beta_estimates.csv";
pub const ALPHA_FILE: &str = "alpha_surface.csv";
pub const TEST_FILE: &str = "test_results.csv";
pub const PLOT_FILE: &str = "alpha_plot.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Covariates, discretely observed outcomes and weights read from disk.
#[derive(Debug, Clone)]
pub struct InputData {
    pub unit_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// `n × d`, without intercept.
    pub x: Matrix,
    pub observations: DiscreteFunctionObservations,
    pub weights: SpatialWeights,
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::data(path, format!("{other:?}")),
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = create(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let row: Vec<String> = row.into_iter().collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn parse_f64(path: &Path, line: u64, field: &str, text: &str) -> Result<f64> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| HarnessError::data(path, format!("line {line}: {field} = {text:?} is not a finite number")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn unit_index(index: &HashMap<&str, usize>, id: &str, missing: &mut BTreeSet<String>) -> Option<usize> {
    match index.get(id) {
        Some(&i) => Some(i),
        None => {
            missing.insert(id.to_string());
            None
        }
    }
}

fn missing_error(path: &Path, missing: BTreeSet<String>) -> HarnessError {
    let ids: Vec<String> = missing.into_iter().collect();
    HarnessError::data(path, format!("unknown unit ids: {}", ids.join(", ")))
}

/// Reads `unit_id, x1, …, xd`.
pub fn read_units(path: &Path) -> Result<(Vec<String>, Vec<String>, Matrix)> {
    let mut rdr = open(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || &header[0] != "unit_id" {
        return Err(HarnessError::data(path, "first column must be unit_id"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(HarnessError::data(path, format!("line {line}: duplicate unit_id {id}")));
        }
        for (k, name) in names.iter().enumerate() {
            values.push(parse_f64(path, line, name, &rec[k + 1])?);
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(HarnessError::data(path, "no units"));
    }
    let x = Matrix::from_row_slice(ids.len(), names.len(), &values);
    Ok((ids, names, x))
}

/// Reads `unit_id, s, q` for the given units. Every unit needs at least one
/// observation.
pub fn read_quantiles(path: &Path, ids: &[String]) -> Result<DiscreteFunctionObservations> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rdr = open(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["unit_id", "s", "q"] {
        return Err(HarnessError::data(path, "columns must be unit_id, s, q"));
    }
    let mut units = vec![Vec::new(); ids.len()];
    let mut missing = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        let s = parse_f64(path, line, "s", &rec[1])?;
        let q = parse_f64(path, line, "q", &rec[2])?;
        if let Some(i) = unit_index(&index, &rec[0], &mut missing) {
            units[i].push((s, q));
        }
    }
    if !missing.is_empty() {
        return Err(missing_error(path, missing));
    }
    let empty: Vec<&str> = units
        .iter()
        .zip(ids)
        .filter(|(u, _)| u.is_empty())
        .map(|(_, id)| id.as_str())
        .collect();
    if !empty.is_empty() {
        return Err(HarnessError::data(path, format!("units without observations: {}", empty.join(", "))));
    }
    DiscreteFunctionObservations::new(units).map_err(|e| HarnessError::data(path, e.to_string()))
}

/// Reads `unit_id, size`.
pub fn read_sizes(path: &Path, ids: &[String]) -> Result<Vec<f64>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rdr = open(path)?;
    let mut sizes = vec![f64::NAN; ids.len()];
    let mut missing = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let size = parse_f64(path, line_of(&rec), "size", &rec[1])?;
        if let Some(i) = unit_index(&index, &rec[0], &mut missing) {
            sizes[i] = size;
        }
    }
    if !missing.is_empty() {
        return Err(missing_error(path, missing));
    }
    let absent: Vec<&str> = sizes
        .iter()
        .zip(ids)
        .filter(|(s, _)| s.is_nan())
        .map(|(_, id)| id.as_str())
        .collect();
    if !absent.is_empty() {
        return Err(HarnessError::data(path, format!("units without a size: {}", absent.join(", "))));
    }
    Ok(sizes)
}

/// Reads an edge list. With a `w` column the weights are taken as given and
/// rows are normalized; without one, edges are undirected adjacencies
/// weighted by `√size` of the neighbor (or equally when `sizes` is `None`).
pub fn read_edges(path: &Path, ids: &[String], sizes: Option<&[f64]>) -> Result<SpatialWeights> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rdr = open(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let weighted = match cols.as_slice() {
        ["i", "j"] => false,
        ["i", "j", "w"] => true,
        _ => return Err(HarnessError::data(path, "columns must be i, j or i, j, w")),
    };
    let mut missing = BTreeSet::new();
    let mut triplets = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let w = if weighted {
            parse_f64(path, line_of(&rec), "w", &rec[2])?
        } else {
            1.0
        };
        let i = unit_index(&index, &rec[0], &mut missing);
        let j = unit_index(&index, &rec[1], &mut missing);
        if let (Some(i), Some(j)) = (i, j) {
            triplets.push((i, j, w));
        }
    }
    if !missing.is_empty() {
        return Err(missing_error(path, missing));
    }
    let n = ids.len();
    let w = if weighted {
        SpatialWeights::from_triplets(n, triplets)?.row_normalize()?
    } else {
        let mut edges: Vec<(usize, usize)> = triplets
            .iter()
            .map(|&(i, j, _)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let ones = vec![1.0; n];
        SpatialWeights::size_weighted_adjacency(n, &edges, sizes.unwrap_or(&ones))?
    };
    Ok(w)
}

/// Reads the estimation inputs from `dir`; `sizes.csv` is optional.
pub fn read_input(dir: &Path) -> Result<InputData> {
    let (unit_ids, covariate_names, x) = read_units(&dir.join(UNITS_FILE))?;
    let observations = read_quantiles(&dir.join(QUANTILES_FILE), &unit_ids)?;
    let sizes_path = dir.join(SIZES_FILE);
    let sizes = if sizes_path.exists() {
        Some(read_sizes(&sizes_path, &unit_ids)?)
    } else {
        None
    };
    let weights = read_edges(&dir.join(EDGES_FILE), &unit_ids, sizes.as_deref())?;
    Ok(InputData {
        unit_ids,
        covariate_names,
        x,
        observations,
        weights,
    })
}

pub fn write_units(path: &Path, ids: &[String], names: &[String], x: &Matrix) -> Result<()> {
    let mut header = vec!["unit_id"];
    header.extend(names.iter().map(String::as_str));
    write_rows(
        path,
        &header,
        ids.iter().enumerate().map(|(i, id)| {
            std::iter::once(id.clone()).chain(x.row(i).iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>())
        }),
    )
}

/// Curves observed at the grid nodes, in `quantiles.csv` layout.
pub fn write_quantiles_sample(path: &Path, ids: &[String], sample: &FunctionalSample) -> Result<()> {
    let pts = sample.grid().points();
    let vals = sample.values();
    write_rows(
        path,
        &["unit_id", "s", "q"],
        (0..ids.len()).flat_map(|i| pts.iter().enumerate().map(move |(g, s)| (i, g, *s))).map(|(i, g, s)| {
            [ids[i].clone(), fmt_f64(s), fmt_f64(vals[(i, g)])]
        }),
    )
}

pub fn write_quantiles(path: &Path, ids: &[String], obs: &DiscreteFunctionObservations) -> Result<()> {
    write_rows(
        path,
        &["unit_id", "s", "q"],
        obs.units()
            .iter()
            .zip(ids)
            .flat_map(|(u, id)| u.iter().map(move |(s, q)| [id.clone(), fmt_f64(*s), fmt_f64(*q)])),
    )
}

pub fn write_edges(path: &Path, ids: &[String], w: &SpatialWeights) -> Result<()> {
    write_rows(
        path,
        &["i", "j", "w"],
        w.triplets().map(|(i, j, v)| [ids[i].clone(), ids[j].clone(), fmt_f64(v)]),
    )
}

pub fn write_sample(path: &Path, ids: &[String], sample: &FunctionalSample) -> Result<()> {
    let pts = sample.grid().points();
    let vals = sample.values();
    write_rows(
        path,
        &["unit_id", "t", "value"],
        (0..ids.len())
            .flat_map(|i| (0..pts.len()).map(move |g| (i, g)))
            .map(|(i, g)| [ids[i].clone(), fmt_f64(pts[g]), fmt_f64(vals[(i, g)])]),
    )
}

/// `s, covariate, estimate, std_error`; the intercept is named `intercept`.
pub fn write_beta(path: &Path, names: &[String], curve: &CurveEstimate) -> Result<()> {
    let mut labels = vec!["intercept".to_string()];
    labels.extend(names.iter().cloned());
    write_rows(
        path,
        &["s", "covariate", "estimate", "std_error"],
        curve.points.iter().flat_map(|p| {
            let se = p.beta_se();
            let labels = labels.clone();
            p.beta_hat
                .iter()
                .enumerate()
                .map(move |(j, b)| [fmt_f64(p.s), labels[j].clone(), fmt_f64(*b), fmt_f64(se[j])])
                .collect::<Vec<_>>()
        }),
    )
}

pub fn write_alpha(path: &Path, curve: &CurveEstimate) -> Result<()> {
    write_rows(
        path,
        &["s", "t", "estimate", "std_error"],
        curve
            .surface
            .iter()
            .map(|a| [fmt_f64(a.s), fmt_f64(a.t), fmt_f64(a.estimate), fmt_f64(a.std_error)]),
    )
}

pub fn write_tests(path: &Path, results: &[WaldResult]) -> Result<()> {
    write_rows(
        path,
        &["s", "interval_lo", "interval_hi", "T_n", "mu_hat", "v_hat", "z", "p_value"],
        results.iter().map(|r| {
            [r.s, r.interval.0, r.interval.1, r.statistic, r.mu_hat, r.v_hat, r.z, r.p_value].map(fmt_f64)
        }),
    )
}

/// One row of figure data: `α̂(t, s)` with a 95% pointwise band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotRow {
    pub s: f64,
    pub t: f64,
    pub alpha_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Estimate ± 1.96 standard errors at every surface point.
pub fn emit_plot_data(curve: &CurveEstimate) -> Vec<PlotRow> {
    curve
        .surface
        .iter()
        .map(|a| {
            let half = 1.96 * a.std_error;
            PlotRow {
                s: a.s,
                t: a.t,
                alpha_hat: a.estimate,
                ci_lo: a.estimate - half,
                ci_hi: a.estimate + half,
            }
        })
        .collect()
}

pub fn write_plot(path: &Path, rows: &[PlotRow]) -> Result<()> {
    write_rows(
        path,
        &["s", "t", "alpha_hat", "ci_lo", "ci_hi"],
        rows.iter().map(|r| [r.s, r.t, r.alpha_hat, r.ci_lo, r.ci_hi].map(fmt_f64)),
    )
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn path_in(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}
