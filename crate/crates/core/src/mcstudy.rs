//! Monte-Carlo study cells: simulate, fit, and bootstrap `R` datasets per
//! scenario and summarize bias, SD, mean bootstrap SE, and coverage.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Family;
use crate::error::{PlsiError, Result};
use crate::inference::{bootstrap_from_point, parameter_names, BootstrapConfig, BootstrapResult};
use crate::numerics::Rng;
use crate::simgen::{simulate, LinkShape, SimScenario};
use crate::trainer::{fit, FitConfig, FitOverrides};

/// One cell of a study: a scenario replicated `replicates` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    /// Template scenario; its seed is replaced per replicate.
    pub scenario: SimScenario,
    pub replicates: usize,
    pub bootstrap: BootstrapConfig,
    pub fit: FitConfig,
    pub seed: u64,
}

impl CellSpec {
    pub fn label(&self) -> String {
        format!(
            "{}_{}_{}",
            self.scenario.link.as_str(),
            self.scenario.family,
            self.scenario.n
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(PlsiError::Config("a study cell needs at least 2 replicates".into()));
        }
        if self.fit.family != self.scenario.family {
            return Err(PlsiError::Config("fit family differs from the scenario family".into()));
        }
        self.scenario.validate()?;
        self.bootstrap.validate()?;
        self.fit.validate()
    }
}

/// Seeds for replicate `r` of a cell seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateSeeds {
    pub data: u64,
    pub fit: u64,
    pub bootstrap: u64,
}

pub fn replicate_seeds(seed: u64, r: usize, attempt: u64) -> ReplicateSeeds {
    let mut rng = Rng::substream(seed, &[r as u64, attempt]);
    ReplicateSeeds {
        data: rng.next_u64(),
        fit: rng.next_u64(),
        bootstrap: rng.next_u64(),
    }
}

/// Estimates and intervals from one replicate dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seeds: ReplicateSeeds,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_normal: Vec<(f64, f64)>,
    pub ci_percentile: Vec<(f64, f64)>,
    pub dropped_bootstrap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub se_mean: f64,
    /// Coverage of the normal interval.
    pub cp: f64,
    /// Coverage of the percentile interval.
    pub cp_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub link: LinkShape,
    pub family: Family,
    pub n: usize,
    pub replicates: usize,
    pub completed: usize,
    pub failed: usize,
    pub bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub meta: TableMeta,
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub table: MetricTable,
    /// Completed replicates in replicate order.
    pub records: Vec<ReplicateRecord>,
    /// Parameter names for the columns of each record.
    pub names: Vec<String>,
    pub truth: Vec<f64>,
}

fn retryable(err: &PlsiError) -> bool {
    matches!(
        err,
        PlsiError::Divergence { .. }
            | PlsiError::NumericOverflow { .. }
            | PlsiError::NoEvents
            | PlsiError::DegenerateDirection
            | PlsiError::InferenceFailure { .. }
    )
}

/// Called with each completed replicate's bootstrap result.
pub type Inspector<'a> = &'a (dyn Fn(usize, &BootstrapResult) + Sync);

fn run_replicate(cell: &CellSpec, r: usize, inspect: Inspector) -> Result<Option<ReplicateRecord>> {
    let mut last = None;
    for attempt in 0..2u64 {
        let seeds = replicate_seeds(cell.seed, r, attempt);
        let scenario = SimScenario {
            seed: seeds.data,
            ..cell.scenario.clone()
        };
        let sim = simulate(&scenario)?;
        let fit_cfg = FitConfig {
            seed: seeds.fit,
            ..cell.fit.clone()
        };
        let boot_cfg = BootstrapConfig {
            seed: seeds.bootstrap,
            ..cell.bootstrap.clone()
        };
        let outcome = fit(&sim.dataset, &fit_cfg)
            .and_then(|point| bootstrap_from_point(&sim.dataset, &fit_cfg, &point.params, &boot_cfg));
        match outcome {
            Ok(b) => {
                inspect(r, &b);
                return Ok(Some(ReplicateRecord {
                    replicate: r,
                    seeds,
                    estimate: b.point,
                    se: b.summary.se,
                    ci_normal: b.summary.ci_normal,
                    ci_percentile: b.summary.ci_percentile,
                    dropped_bootstrap: b.dropped,
                }))
            }
            Err(e) if retryable(&e) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    if let Some(e) = last {
        eprintln!("warning: replicate {r} failed twice ({e}); excluded");
    }
    Ok(None)
}

/// Runs every replicate of `cell` and summarizes them.
///
/// Replicate `r` draws its seeds from `Rng::substream(seed, [r, attempt])`,
/// so a cell's table does not depend on scheduling or on other cells.
pub fn run_cell(cell: &CellSpec) -> Result<CellResult> {
    run_cell_inspected(cell, &|_, _| {})
}

/// [`run_cell`], passing every replicate's fitted models to `inspect`.
pub fn run_cell_inspected(cell: &CellSpec, inspect: Inspector) -> Result<CellResult> {
    cell.validate()?;
    let outcomes = (0..cell.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cell, r, inspect))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<ReplicateRecord> = outcomes.into_iter().flatten().collect();
    if records.len() < 2 {
        return Err(PlsiError::InferenceFailure {
            dropped: cell.replicates - records.len(),
            requested: cell.replicates,
        });
    }
    let sc = &cell.scenario;
    let names = parameter_names(sc.p(), sc.gamma_true.len());
    let truth: Vec<f64> = sc.beta_true.iter().chain(&sc.gamma_true).copied().collect();
    let mut rows = summarize_records(&names, &truth, &records);
    if sc.family == Family::Cox {
        // The partial likelihood does not identify the intercept.
        rows.retain(|row| row.name != "gamma0");
    }
    let table = MetricTable {
        meta: TableMeta {
            link: sc.link,
            family: sc.family,
            n: sc.n,
            replicates: cell.replicates,
            completed: records.len(),
            failed: cell.replicates - records.len(),
            bootstrap: cell.bootstrap.replicates,
            alpha: cell.bootstrap.alpha,
            seed: cell.seed,
        },
        rows,
    };
    Ok(CellResult {
        table,
        records,
        names,
        truth,
    })
}

/// Bias, SD, mean SE, and coverage per parameter from replicate records.
pub fn summarize_records(names: &[String], truth: &[f64], records: &[ReplicateRecord]) -> Vec<MetricRow> {
    let r = records.len() as f64;
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let est: Vec<f64> = records.iter().map(|rec| rec.estimate[j]).collect();
            let m = est.iter().sum::<f64>() / r;
            let sd = if records.len() > 1 {
                (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                0.0
            };
            let covers = |ci: &(f64, f64)| ci.0 <= truth[j] && truth[j] <= ci.1;
            MetricRow {
                name: name.clone(),
                truth: truth[j],
                bias: m - truth[j],
                sd,
                se_mean: records.iter().map(|rec| rec.se[j]).sum::<f64>() / r,
                cp: records.iter().filter(|rec| covers(&rec.ci_normal[j])).count() as f64 / r,
                cp_percentile: records
                    .iter()
                    .filter(|rec| covers(&rec.ci_percentile[j]))
                    .count() as f64
                    / r,
            }
        })
        .collect()
}

const TABLE_COLUMNS: [&str; 7] = ["param", "truth", "bias", "sd", "se_mean", "cp", "cp_percentile"];

/// Four-decimal rendering without a negative zero.
pub fn fmt4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

/// Aligned text and a full-precision CSV twin of `table`.
pub fn format_table(table: &MetricTable) -> (String, String) {
    let m = &table.meta;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "# link={} family={} n={} R={} completed={} B={} alpha={} seed={}",
        m.link.as_str(),
        m.family,
        m.n,
        m.replicates,
        m.completed,
        m.bootstrap,
        m.alpha,
        m.seed
    );
    let _ = writeln!(
        text,
        "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>14}",
        TABLE_COLUMNS[0],
        TABLE_COLUMNS[1],
        TABLE_COLUMNS[2],
        TABLE_COLUMNS[3],
        TABLE_COLUMNS[4],
        TABLE_COLUMNS[5],
        TABLE_COLUMNS[6]
    );
    for row in &table.rows {
        let _ = writeln!(
            text,
            "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>14}",
            row.name,
            fmt4(row.truth),
            fmt4(row.bias),
            fmt4(row.sd),
            fmt4(row.se_mean),
            fmt4(row.cp),
            fmt4(row.cp_percentile)
        );
    }
    if table.rows.iter().any(|r| r.name == "gamma0") {
        text.push_str("# gamma0 is the intercept; gamma1.. are the covariate slopes\n");
    }

    let mut csv = TABLE_COLUMNS.join(",");
    csv.push('\n');
    for row in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.name, row.truth, row.bias, row.sd, row.se_mean, row.cp, row.cp_percentile
        );
    }
    (text, csv)
}

/// Parses the CSV produced by [`format_table`].
pub fn parse_table_csv(csv: &str) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| PlsiError::Data(e.to_string()))?
        .clone();
    if header.iter().ne(TABLE_COLUMNS) {
        return Err(PlsiError::Data("unexpected metric table header".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| PlsiError::Data(e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| {
                PlsiError::Data(format!("line {}: bad number {:?}", line + 2, &rec[k]))
            })
        };
        rows.push(MetricRow {
            name: rec[0].to_string(),
            truth: num(1)?,
            bias: num(2)?,
            sd: num(3)?,
            se_mean: num(4)?,
            cp: num(5)?,
            cp_percentile: num(6)?,
        });
    }
    Ok(rows)
}

/// Long-format CSV of every replicate's estimates and intervals.
pub fn format_records(result: &CellResult) -> String {
    let mut out =
        String::from("replicate,param,truth,estimate,se,normal_lo,normal_hi,percentile_lo,percentile_hi\n");
    for rec in &result.records {
        for (j, name) in result.names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                rec.replicate,
                name,
                result.truth[j],
                rec.estimate[j],
                rec.se[j],
                rec.ci_normal[j].0,
                rec.ci_normal[j].1,
                rec.ci_percentile[j].0,
                rec.ci_percentile[j].1
            );
        }
    }
    out
}

/// A grid of study cells: every link × family × sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub links: Vec<LinkShape>,
    pub families: Vec<Family>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub warm_start: bool,
    pub rho: Option<f64>,
    pub fit: FitOverrides,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            links: vec![LinkShape::Linear, LinkShape::SShape, LinkShape::Sigmoid],
            families: vec![Family::Gaussian],
            sizes: vec![500, 2000],
            replicates: 50,
            bootstrap: 100,
            alpha: 0.05,
            seed: 0,
            warm_start: false,
            rho: None,
            fit: FitOverrides::default(),
        }
    }
}

/// Cell selector `link,family,n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellKey {
    pub link: LinkShape,
    pub family: Family,
    pub n: usize,
}

impl std::str::FromStr for CellKey {
    type Err = PlsiError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(PlsiError::Argument(format!(
                "cell {s:?} should look like link,family,n"
            )));
        }
        Ok(CellKey {
            link: parts[0].parse()?,
            family: parts[1].parse()?,
            n: parts[2]
                .parse()
                .map_err(|_| PlsiError::Argument(format!("bad sample size {:?}", parts[2])))?,
        })
    }
}

fn family_code(f: Family) -> u64 {
    match f {
        Family::Gaussian => 0,
        Family::Binomial => 1,
        Family::Poisson => 2,
        Family::Cox => 3,
    }
}

fn link_code(l: LinkShape) -> u64 {
    match l {
        LinkShape::Linear => 0,
        LinkShape::SShape => 1,
        LinkShape::Sigmoid => 2,
    }
}

impl GridConfig {
    /// Cell seed, a function of the grid seed and the cell's identity only.
    pub fn cell_seed(&self, key: CellKey) -> u64 {
        Rng::substream(self.seed, &[link_code(key.link), family_code(key.family), key.n as u64]).next_u64()
    }

    pub fn keys(&self) -> Vec<CellKey> {
        let mut keys = Vec::new();
        for &link in &self.links {
            for &family in &self.families {
                for &n in &self.sizes {
                    keys.push(CellKey { link, family, n });
                }
            }
        }
        keys
    }

    pub fn cell(&self, key: CellKey) -> Result<CellSpec> {
        let mut scenario = SimScenario::standard(key.link, key.family, key.n, 0);
        if let Some(rho) = self.rho {
            scenario.rho = rho;
        }
        Ok(CellSpec {
            scenario,
            replicates: self.replicates,
            bootstrap: BootstrapConfig {
                replicates: self.bootstrap,
                alpha: self.alpha,
                seed: 0,
                warm_start: self.warm_start,
                ..BootstrapConfig::default()
            },
            fit: self.fit.apply(FitConfig::for_family(key.family))?,
            seed: self.cell_seed(key),
        })
    }

    /// Cells in grid order, optionally restricted to `only`.
    pub fn cells(&self, only: Option<CellKey>) -> Result<Vec<CellSpec>> {
        let keys: Vec<CellKey> = match only {
            Some(k) => vec![k],
            None => self.keys(),
        };
        keys.into_iter().map(|k| self.cell(k)).collect()
    }
}
