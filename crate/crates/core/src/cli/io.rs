//! CSV ingestion with column roles, and small file helpers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::checkpoint::Standardization;
use crate::data::{Dataset, Family, Outcome};
use crate::error::{PlsiError, Result};
use crate::numerics::{mean, sample_sd, Matrix};

pub const INTERCEPT: &str = "(intercept)";

/// A header-driven CSV file held as text cells.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| PlsiError::Data(format!("cannot read CSV header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths {
                    pos,
                    expected_len,
                    len,
                } => PlsiError::Data(format!(
                    "line {}: expected {expected_len} fields, found {len}",
                    pos.as_ref().map_or(0, |p| p.line())
                )),
                _ => PlsiError::Data(format!("CSV: {e}")),
            })?;
            rows.push(rec);
        }
        Ok(CsvTable { headers, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| PlsiError::Argument(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&bytes)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            PlsiError::Argument(format!(
                "column {name:?} not found; available: {}",
                self.headers.join(", ")
            ))
        })
    }

    /// Expands a comma list of names; an entry ending in `*` matches every
    /// header with that prefix, in file order.
    pub fn resolve(&self, spec: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if let Some(prefix) = item.strip_suffix('*') {
                let hits: Vec<String> = self
                    .headers
                    .iter()
                    .filter(|h| h.starts_with(prefix))
                    .cloned()
                    .collect();
                if hits.is_empty() {
                    return Err(PlsiError::Argument(format!("no column matches {item:?}")));
                }
                out.extend(hits);
            } else {
                self.index_of(item)?;
                out.push(item.to_string());
            }
        }
        Ok(out)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index_of(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let cell = &rec[j];
                cell.parse::<f64>().map_err(|_| {
                    PlsiError::Data(format!(
                        "line {}, column {name:?}: cannot parse {cell:?} as a number",
                        i + 2
                    ))
                })
            })
            .collect()
    }

    pub fn event_column(&self, name: &str) -> Result<Vec<bool>> {
        let j = self.index_of(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, rec)| match rec[j].to_ascii_lowercase().as_str() {
                "1" | "1.0" | "true" => Ok(true),
                "0" | "0.0" | "false" => Ok(false),
                other => Err(PlsiError::Data(format!(
                    "line {}, column {name:?}: event indicator must be 0 or 1, found {other:?}",
                    i + 2
                ))),
            })
            .collect()
    }

    pub fn matrix(&self, names: &[String]) -> Result<Matrix> {
        let cols = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<Vec<_>>>()?;
        if cols.is_empty() {
            return Ok(Matrix::zeros(self.len(), 0));
        }
        Matrix::from_columns(&cols)
    }
}

/// How columns of a CSV file map onto the model.
#[derive(Debug, Clone)]
pub struct DataRoles {
    pub family: Family,
    pub exposures: String,
    pub covariates: Option<String>,
    pub outcome: Option<String>,
    pub time: Option<String>,
    pub event: Option<String>,
    pub weights: Option<String>,
    pub intercept: bool,
    pub standardize: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub exposures: Vec<String>,
    /// Names in `gamma` order.
    pub covariates: Vec<String>,
    pub standardization: Option<Standardization>,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn standardize(x: &mut Matrix, names: &[String]) -> Result<Standardization> {
    let mut means = Vec::with_capacity(x.cols());
    let mut sds = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let col = x.column(j);
        let (m, sd) = (mean(&col), sample_sd(&col));
        if !(sd > 0.0) {
            return Err(PlsiError::Data(format!(
                "exposure {:?} has zero variance and cannot be standardized",
                names[j]
            )));
        }
        means.push(m);
        sds.push(sd);
    }
    apply_standardization(x, &Standardization { means, sds })
}

fn apply_standardization(x: &mut Matrix, st: &Standardization) -> Result<Standardization> {
    if st.means.len() != x.cols() || st.sds.len() != x.cols() {
        return Err(PlsiError::Shape("standardization does not match the exposures".into()));
    }
    for i in 0..x.rows() {
        for (j, v) in x.row_mut(i).iter_mut().enumerate() {
            *v = (*v - st.means[j]) / st.sds[j];
        }
    }
    Ok(st.clone())
}

/// Exposure and covariate design matrices for `exposures` / `covariates`
/// (covariate names may include the intercept marker).
pub fn design(
    table: &CsvTable,
    exposures: &[String],
    covariates: &[String],
    standardization: Option<&Standardization>,
) -> Result<(Matrix, Matrix)> {
    let mut x = table.matrix(exposures)?;
    if let Some(st) = standardization {
        apply_standardization(&mut x, st)?;
    }
    let cols = covariates
        .iter()
        .map(|c| {
            if c == INTERCEPT {
                Ok(vec![1.0; table.len()])
            } else {
                table.column(c)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let z = if cols.is_empty() {
        Matrix::zeros(table.len(), 0)
    } else {
        Matrix::from_columns(&cols)?
    };
    Ok((x, z))
}

/// Reads `path` and assembles the dataset. With standardization on, a
/// `stored` scaling is applied as is; otherwise it is estimated.
pub fn load_dataset(
    path: &Path,
    roles: &DataRoles,
    stored: Option<&Standardization>,
) -> Result<LoadedData> {
    let bytes = fs::read(path)
        .map_err(|e| PlsiError::Argument(format!("cannot read {}: {e}", path.display())))?;
    let table = CsvTable::parse(&bytes)?;
    if table.is_empty() {
        return Err(PlsiError::Data(format!("{} has no data rows", path.display())));
    }
    let exposures = table.resolve(&roles.exposures)?;
    if exposures.is_empty() {
        return Err(PlsiError::Argument("no exposure columns given".into()));
    }
    let mut covariates = Vec::new();
    if roles.intercept {
        covariates.push(INTERCEPT.to_string());
    }
    if let Some(spec) = &roles.covariates {
        covariates.extend(table.resolve(spec)?);
    }
    let (mut x, z) = design(&table, &exposures, &covariates, None)?;
    let standardization = if roles.standardize {
        Some(match stored {
            Some(st) => apply_standardization(&mut x, st)?,
            None => standardize(&mut x, &exposures)?,
        })
    } else {
        None
    };

    let need = |opt: &Option<String>, flag: &str| {
        opt.clone().ok_or_else(|| {
            PlsiError::Argument(format!("the {} family needs --{flag}", roles.family))
        })
    };
    let outcome = match roles.family {
        Family::Cox => {
            let time = table.column(&need(&roles.time, "time")?)?;
            let event = table.event_column(&need(&roles.event, "event")?)?;
            Outcome::Cox { time, event }
        }
        f => {
            let y = table.column(&need(&roles.outcome, "outcome")?)?;
            match f {
                Family::Gaussian => Outcome::Gaussian(y),
                Family::Binomial => Outcome::Binomial(y),
                _ => Outcome::Poisson(y),
            }
        }
    };
    outcome.validate().map_err(|e| match e {
        PlsiError::Domain(msg) => PlsiError::Data(msg),
        other => other,
    })?;
    let mut dataset = Dataset::new(x, z, outcome)?;
    if let Some(w) = &roles.weights {
        dataset = dataset.with_weights(table.column(w)?)?;
    }
    Ok(LoadedData {
        dataset,
        exposures,
        covariates,
        standardization,
        sha256: sha256_hex(&bytes),
    })
}

/// Writes a dataset with columns `x1..`, `z1..` (skipping an all-ones first
/// covariate), then `y` or `time,event`.
pub fn dataset_csv(data: &Dataset) -> String {
    let skip = usize::from(
        data.q() > 0 && (0..data.n()).all(|i| data.z.get(i, 0) == 1.0),
    );
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.extend((1..=data.q() - skip).map(|k| format!("z{k}")));
    match &data.outcome {
        Outcome::Cox { .. } => header.extend(["time".to_string(), "event".to_string()]),
        _ => header.push("y".into()),
    }
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..data.n() {
        let mut fields: Vec<String> = data.x.row(i).iter().map(f64::to_string).collect();
        fields.extend(data.z.row(i)[skip..].iter().map(f64::to_string));
        match &data.outcome {
            Outcome::Cox { time, event } => {
                fields.push(time[i].to_string());
                fields.push(u8::from(event[i]).to_string());
            }
            Outcome::Gaussian(y) | Outcome::Binomial(y) | Outcome::Poisson(y) => {
                fields.push(y[i].to_string())
            }
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}
