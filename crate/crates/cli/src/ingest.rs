//! Reading and writing the CSV formats.
//!
//! Counts come as `area,time,count[,offset]`, one row per cell. Adjacency is
//! `i,j`, covariates `area,<name>...`, population `area,population`. Area and
//! time indices are 0-based unless `one_based` is set, in which case every
//! index in every file is shifted down by one on the way in.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use heavyrush::graph::SpatialGraph;
use heavyrush::model::{Covariates, Dataset, Standardization};
use heavyrush::panel::AreaTime;
use heavyrush::simulate::compute_offsets;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataPaths {
    pub counts: PathBuf,
    pub adjacency: PathBuf,
    pub covariates: Option<PathBuf>,
    pub population: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub one_based: bool,
    /// Centre and scale covariates from the ingested values.
    pub scale_covariates: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            one_based: false,
            scale_covariates: true,
        }
    }
}

/// Constants used to standardize one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateScaling {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub graph: SpatialGraph,
    /// Empty when covariates were absent or left unscaled.
    pub scaling: Vec<CovariateScaling>,
}

struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| CliError::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| CliError::csv(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Ok(Table {
            file: path.display().to_string(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.optional_column(name).ok_or_else(|| CliError::MissingColumn {
            file: self.file.clone(),
            column: name.to_string(),
        })
    }

    fn optional_column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn invalid(&self, line: u64, message: String) -> CliError {
        CliError::InvalidValue {
            file: self.file.clone(),
            line,
            message,
        }
    }

    fn float(&self, line: u64, field: &str, column: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.invalid(line, format!("`{field}` in column `{column}` is not a finite number")))
    }

    fn index(&self, line: u64, field: &str, column: &str, one_based: bool) -> Result<usize> {
        let raw: i64 = field
            .parse()
            .map_err(|_| self.invalid(line, format!("`{field}` in column `{column}` is not an integer")))?;
        let shifted = if one_based { raw - 1 } else { raw };
        usize::try_from(shifted).map_err(|_| {
            let base = if one_based { 1 } else { 0 };
            self.invalid(line, format!("{column} index {raw} is below {base}"))
        })
    }
}

/// Checks that `seen` covers `0..=max` and names the line of the first index
/// beyond a gap.
fn check_contiguous(file: &str, what: &'static str, seen: &BTreeMap<usize, u64>) -> Result<usize> {
    for (expected, (&index, &line)) in seen.iter().enumerate() {
        if index != expected {
            return Err(CliError::NonContiguousIndex {
                file: file.to_string(),
                line,
                what,
                index,
                missing: expected,
            });
        }
    }
    Ok(seen.len())
}

/// Reads counts, adjacency and the optional covariate and population files
/// into a dataset and its graph.
pub fn parse_dataset(paths: &DataPaths, opts: IngestOptions) -> Result<Ingested> {
    let table = Table::read(&paths.counts)?;
    let (c_area, c_time, c_count) = (table.column("area")?, table.column("time")?, table.column("count")?);
    let c_offset = table.optional_column("offset");
    if c_offset.is_none() && paths.population.is_none() {
        return Err(CliError::MissingColumn {
            file: table.file.clone(),
            column: "offset (or supply a population file)".into(),
        });
    }

    let mut cells: BTreeMap<(usize, usize), (u64, u64)> = BTreeMap::new();
    let mut area_lines = BTreeMap::new();
    let mut time_lines = BTreeMap::new();
    let mut offsets: BTreeMap<usize, (f64, u64)> = BTreeMap::new();
    for (line, row) in &table.rows {
        let line = *line;
        let area = table.index(line, &row[c_area], "area", opts.one_based)?;
        let time = table.index(line, &row[c_time], "time", opts.one_based)?;
        let field = &row[c_count];
        let count: u64 = match field.parse::<i64>() {
            Ok(v) if v < 0 => {
                return Err(CliError::NegativeCount {
                    file: table.file.clone(),
                    line,
                    value: field.clone(),
                })
            }
            Ok(v) => v as u64,
            Err(_) => return Err(table.invalid(line, format!("count `{field}` is not an integer"))),
        };
        if cells.insert((area, time), (count, line)).is_some() {
            return Err(CliError::Duplicate {
                file: table.file.clone(),
                line,
                what: format!("cell (area {area}, time {time})"),
            });
        }
        area_lines.entry(area).or_insert(line);
        time_lines.entry(time).or_insert(line);
        if let Some(c) = c_offset {
            let e = table.float(line, &row[c], "offset")?;
            match offsets.get(&area) {
                Some(&(prev, _)) if prev != e => {
                    return Err(CliError::TimeVaryingOffset {
                        file: table.file.clone(),
                        line,
                        area,
                    })
                }
                Some(_) => {}
                None => {
                    offsets.insert(area, (e, line));
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::Inconsistent {
            file: table.file.clone(),
            message: "no data rows".into(),
        });
    }
    let n = check_contiguous(&table.file, "area", &area_lines)?;
    let t_len = check_contiguous(&table.file, "time", &time_lines)?;
    let mut counts = AreaTime::filled(n, t_len, 0u64);
    for area in 0..n {
        for time in 0..t_len {
            let (y, _) = cells.get(&(area, time)).ok_or_else(|| CliError::MissingCell {
                file: table.file.clone(),
                area,
                time,
            })?;
            counts[(area, time)] = *y;
        }
    }

    let offsets: Vec<f64> = match &paths.population {
        Some(path) => {
            let population = read_area_values(path, "population", n, opts.one_based)?;
            let file = path.display().to_string();
            if let Some(&(value, line)) = population.iter().find(|(p, _)| !(*p > 0.0)) {
                return Err(CliError::ZeroPopulation { file, line, value });
            }
            let values: Vec<f64> = population.iter().map(|&(p, _)| p).collect();
            compute_offsets(&counts, &values)?
        }
        None => {
            let mut out = Vec::with_capacity(n);
            for area in 0..n {
                let (e, line) = offsets[&area];
                if !(e > 0.0) {
                    return Err(table.invalid(line, format!("offset {e} of area {area} must be positive")));
                }
                out.push(e);
            }
            out
        }
    };

    let graph = read_adjacency(&paths.adjacency, n, opts.one_based)?;

    let (covariates, scaling) = match &paths.covariates {
        Some(path) => {
            let mut cov = read_covariates(path, n, opts.one_based)?;
            let scaling = if opts.scale_covariates {
                cov.standardize()
                    .into_iter()
                    .zip(&cov.names)
                    .map(|(Standardization { mean, sd }, name)| CovariateScaling {
                        name: name.clone(),
                        mean,
                        sd,
                    })
                    .collect()
            } else {
                Vec::new()
            };
            (cov, scaling)
        }
        None => (Covariates::none(n), Vec::new()),
    };

    Ok(Ingested {
        dataset: Dataset::new(counts, offsets, covariates)?,
        graph,
        scaling,
    })
}

/// One value per area from a two-column `area,<column>` file, with the line
/// each came from.
fn read_area_values(path: &Path, column: &str, n: usize, one_based: bool) -> Result<Vec<(f64, u64)>> {
    let table = Table::read(path)?;
    let (c_area, c_value) = (table.column("area")?, table.column(column)?);
    let mut values: Vec<Option<(f64, u64)>> = vec![None; n];
    for (line, row) in &table.rows {
        let area = table.index(*line, &row[c_area], "area", one_based)?;
        if area >= n {
            return Err(table.invalid(*line, format!("area {area} is not in the count panel ({n} areas)")));
        }
        if values[area].is_some() {
            return Err(CliError::Duplicate {
                file: table.file.clone(),
                line: *line,
                what: format!("area {area}"),
            });
        }
        values[area] = Some((table.float(*line, &row[c_value], column)?, *line));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(area, v)| {
            v.ok_or_else(|| CliError::Inconsistent {
                file: table.file.clone(),
                message: format!("no {column} for area {area}"),
            })
        })
        .collect()
}

fn read_adjacency(path: &Path, n: usize, one_based: bool) -> Result<SpatialGraph> {
    let table = Table::read(path)?;
    let (c_i, c_j) = (table.column("i")?, table.column("j")?);
    let mut edges = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let i = table.index(*line, &row[c_i], "i", one_based)?;
        let j = table.index(*line, &row[c_j], "j", one_based)?;
        if i >= n || j >= n {
            return Err(table.invalid(*line, format!("edge ({i}, {j}) names an area outside 0..{n}")));
        }
        if i == j {
            return Err(table.invalid(*line, format!("self-loop on area {i}")));
        }
        edges.push((i, j));
    }
    Ok(SpatialGraph::new(n, edges)?)
}

fn read_covariates(path: &Path, n: usize, one_based: bool) -> Result<Covariates> {
    let table = Table::read(path)?;
    let c_area = table.column("area")?;
    let names: Vec<String> = table
        .headers
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != c_area)
        .map(|(_, h)| h.clone())
        .collect();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    for (line, row) in &table.rows {
        let area = table.index(*line, &row[c_area], "area", one_based)?;
        if area >= n {
            return Err(table.invalid(*line, format!("area {area} is not in the count panel ({n} areas)")));
        }
        if rows[area].is_some() {
            return Err(CliError::Duplicate {
                file: table.file.clone(),
                line: *line,
                what: format!("area {area}"),
            });
        }
        let values = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != c_area)
            .map(|(k, f)| table.float(*line, f, &table.headers[k]))
            .collect::<Result<Vec<f64>>>()?;
        rows[area] = Some(values);
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(area, r)| {
            r.ok_or_else(|| CliError::Inconsistent {
                file: table.file.clone(),
                message: format!("no covariates for area {area}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Covariates { names, rows })
}

pub(crate) fn create_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = create_writer(path)?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `area,time,count,offset`, 0-based.
pub fn write_counts(path: &Path, counts: &AreaTime<u64>, offsets: &[f64]) -> Result<()> {
    let rows = (0..counts.n_areas()).flat_map(|i| {
        (0..counts.n_times()).map(move |t| {
            vec![
                i.to_string(),
                t.to_string(),
                counts[(i, t)].to_string(),
                offsets[i].to_string(),
            ]
        })
    });
    write_rows(path, &["area", "time", "count", "offset"], rows)
}

/// Writes `i,j`, 0-based, each edge once.
pub fn write_adjacency(path: &Path, graph: &SpatialGraph) -> Result<()> {
    let rows = graph.edges().iter().map(|&(i, j)| vec![i.to_string(), j.to_string()]);
    write_rows(path, &["i", "j"], rows)
}
