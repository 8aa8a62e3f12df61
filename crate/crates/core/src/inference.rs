//! Nonparametric bootstrap for the index direction and linear coefficients,
//! and pointwise bands for the fitted link curve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{PlsiError, Result};
use crate::model::{self, project_identifiable, ModelParams};
use crate::numerics::{mean, quantile_sorted, standard_normal_quantile, Matrix, Rng};
use crate::trainer::{fit, fit_with, FitConfig};

/// Leading coordinates this close to zero fall back to the dot-product sign rule.
pub const SIGN_TIE_TOL: f64 = 1e-12;
/// Fraction of dropped replicates above which the bootstrap fails.
pub const MAX_DROP_FRACTION: f64 = 0.2;
pub const DEFAULT_GRID_POINTS: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Start each replicate fit from the full-data estimate.
    pub warm_start: bool,
    pub grid_points: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 100,
            alpha: 0.05,
            seed: 0,
            warm_start: false,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(PlsiError::Config("bootstrap needs at least 2 replicates".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PlsiError::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.grid_points == 0 {
            return Err(PlsiError::Config("curve grid needs at least one point".into()));
        }
        Ok(())
    }
}

/// Pointwise summary of replicate link curves on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub alpha: f64,
}

/// Standard errors and intervals computed from a replicate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_normal: Vec<(f64, f64)>,
    pub ci_percentile: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Row labels: `beta1..betap`, `gamma0..gamma(q-1)`.
    pub names: Vec<String>,
    /// Full-data model.
    pub point_model: ModelParams,
    /// Full-data `(beta, gamma)`.
    pub point: Vec<f64>,
    /// One row per kept replicate, columns ordered as `names`.
    pub replicates: Matrix,
    /// Identifier of each kept replicate, in row order.
    pub replicate_ids: Vec<usize>,
    pub replicate_models: Vec<ModelParams>,
    pub summary: Summary,
    pub alpha: f64,
    pub requested: usize,
    pub dropped: usize,
    pub retried: usize,
    pub curve_band: CurveBand,
}

impl BootstrapResult {
    pub fn se(&self) -> &[f64] {
        &self.summary.se
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.rows()).map(|i| self.row(i)).collect();
        (self.cols(), rows).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (cols, rows): (usize, Vec<Vec<f64>>) = Deserialize::deserialize(deserializer)?;
        let n = rows.len();
        Matrix::new(n, cols, rows.concat()).map_err(serde::de::Error::custom)
    }
}

/// Parameter labels in replicate-matrix column order.
pub fn parameter_names(p: usize, q: usize) -> Vec<String> {
    (1..=p)
        .map(|j| format!("beta{j}"))
        .chain((0..q).map(|k| format!("gamma{k}")))
        .collect()
}

/// Applies the sign/norm rule; near-ties on the leading coordinate take the
/// sign that agrees with `beta_point`.
pub fn align_replicate(beta_rep: &[f64], beta_point: &[f64]) -> Result<Vec<f64>> {
    let (mut aligned, _) = project_identifiable(beta_rep)?;
    if aligned[0].abs() <= SIGN_TIE_TOL {
        let agreement: f64 = aligned.iter().zip(beta_point).map(|(a, b)| a * b).sum();
        if agreement < 0.0 {
            aligned.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(aligned)
}

/// Standard errors (divisor `B - 1`), normal intervals around `point`, and
/// type-7 percentile intervals for each column of `replicates`.
pub fn summarize(point: &[f64], replicates: &Matrix, alpha: f64) -> Result<Summary> {
    if replicates.rows() < 2 {
        return Err(PlsiError::Domain("need at least two replicates".into()));
    }
    if replicates.cols() != point.len() {
        return Err(PlsiError::Shape(format!(
            "{} point estimates but {} replicate columns",
            point.len(),
            replicates.cols()
        )));
    }
    let z = standard_normal_quantile(1.0 - alpha / 2.0)?;
    let b = replicates.rows() as f64;
    let mut out = Summary {
        mean: Vec::new(),
        se: Vec::new(),
        ci_normal: Vec::new(),
        ci_percentile: Vec::new(),
    };
    for j in 0..replicates.cols() {
        let mut col = replicates.column(j);
        let m = mean(&col);
        let se = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
        col.sort_by(f64::total_cmp);
        out.mean.push(m);
        out.se.push(se);
        out.ci_normal.push((point[j] - z * se, point[j] + z * se));
        out.ci_percentile.push((
            quantile_sorted(&col, alpha / 2.0),
            quantile_sorted(&col, 1.0 - alpha / 2.0),
        ));
    }
    Ok(out)
}

/// `points` equispaced values between the 0.5% and 99.5% quantiles of `index`.
pub fn default_grid(index: &[f64], points: usize) -> Result<Vec<f64>> {
    if index.is_empty() || points == 0 {
        return Err(PlsiError::Domain("cannot build a grid from no index values".into()));
    }
    let mut sorted = index.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, 0.005);
    let hi = quantile_sorted(&sorted, 0.995);
    Ok(linspace(lo, hi, points))
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Pointwise mean and `(alpha/2, 1 - alpha/2)` quantiles of the replicate curves.
pub fn curve_band(replicate_models: &[ModelParams], grid: &[f64], alpha: f64) -> Result<CurveBand> {
    if replicate_models.len() < 2 {
        return Err(PlsiError::Domain("curve band needs at least two replicate models".into()));
    }
    if grid.is_empty() {
        return Err(PlsiError::Domain("curve grid is empty".into()));
    }
    if grid.iter().any(|s| !s.is_finite()) {
        return Err(PlsiError::Domain("curve grid has non-finite values".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PlsiError::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    let curves = replicate_models
        .iter()
        .map(|m| m.link(grid))
        .collect::<Result<Vec<_>>>()?;
    let mut band = CurveBand {
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        lo: Vec::with_capacity(grid.len()),
        hi: Vec::with_capacity(grid.len()),
        alpha,
    };
    let mut column = vec![0.0; curves.len()];
    for k in 0..grid.len() {
        for (c, curve) in column.iter_mut().zip(&curves) {
            *c = curve[k];
        }
        band.mean.push(mean(&column));
        column.sort_by(f64::total_cmp);
        band.lo.push(quantile_sorted(&column, alpha / 2.0));
        band.hi.push(quantile_sorted(&column, 1.0 - alpha / 2.0));
    }
    Ok(band)
}

fn retryable(err: &PlsiError) -> bool {
    matches!(
        err,
        PlsiError::Divergence { .. }
            | PlsiError::NumericOverflow { .. }
            | PlsiError::NoEvents
            | PlsiError::DegenerateDirection
            | PlsiError::Data(_)
    )
}

/// Resample indices for replicate `id`, attempt `attempt`.
pub fn resample_indices(seed: u64, id: usize, attempt: u64, n: usize) -> (Vec<usize>, u64) {
    let mut rng = Rng::substream(seed, &[id as u64, attempt]);
    let idx = (0..n).map(|_| rng.below(n)).collect();
    (idx, rng.next_u64())
}

enum ReplicateOutcome {
    Kept { params: ModelParams, retried: bool },
    Dropped,
}

fn run_replicate(
    data: &Dataset,
    config: &FitConfig,
    start: Option<&ModelParams>,
    seed: u64,
    id: usize,
) -> Result<ReplicateOutcome> {
    for attempt in 0..2u64 {
        let (idx, fit_seed) = resample_indices(seed, id, attempt, data.n());
        let sample = data.select(&idx);
        let cfg = FitConfig {
            seed: fit_seed,
            ..config.clone()
        };
        match fit_with(&sample, &cfg, start, &mut |_| {}) {
            Ok(r) => {
                return Ok(ReplicateOutcome::Kept {
                    params: r.params,
                    retried: attempt > 0,
                })
            }
            Err(e) if retryable(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(ReplicateOutcome::Dropped)
}

/// Fits the full data, then runs the bootstrap around that fit.
pub fn bootstrap(data: &Dataset, config: &FitConfig, boot: &BootstrapConfig) -> Result<BootstrapResult> {
    boot.validate()?;
    let point = fit(data, config)?;
    bootstrap_from_point(data, config, &point.params, boot)
}

/// Bootstrap around an existing full-data fit.
///
/// Replicate `b` resamples with `Rng::substream(seed, [b, attempt])`; results
/// are collected in replicate order regardless of scheduling.
pub fn bootstrap_from_point(
    data: &Dataset,
    config: &FitConfig,
    point_model: &ModelParams,
    boot: &BootstrapConfig,
) -> Result<BootstrapResult> {
    boot.validate()?;
    point_model.check()?;
    let start = boot.warm_start.then_some(point_model);
    let outcomes = (0..boot.replicates)
        .into_par_iter()
        .map(|b| run_replicate(data, config, start, boot.seed, b))
        .collect::<Result<Vec<_>>>()?;

    let mut models = Vec::new();
    let mut ids = Vec::new();
    let mut retried = 0;
    for (b, outcome) in outcomes.into_iter().enumerate() {
        if let ReplicateOutcome::Kept { params, retried: r } = outcome {
            retried += usize::from(r);
            ids.push(b);
            models.push(params);
        }
    }
    let dropped = boot.replicates - models.len();
    if dropped as f64 > MAX_DROP_FRACTION * boot.replicates as f64 || models.len() < 2 {
        return Err(PlsiError::InferenceFailure {
            dropped,
            requested: boot.replicates,
        });
    }

    let (p, q) = (point_model.p(), point_model.q());
    let point: Vec<f64> = point_model
        .beta
        .iter()
        .chain(&point_model.gamma)
        .copied()
        .collect();
    let mut rows = Vec::with_capacity(models.len() * (p + q));
    for m in &mut models {
        m.beta = align_replicate(&m.beta, &point_model.beta)?;
        rows.extend_from_slice(&m.beta);
        rows.extend_from_slice(&m.gamma);
    }
    let replicates = Matrix::new(models.len(), p + q, rows)?;
    let summary = summarize(&point, &replicates, boot.alpha)?;

    let index = model::index(point_model, &data.x)?;
    let grid = default_grid(&index, boot.grid_points)?;
    let curve_band = curve_band(&models, &grid, boot.alpha)?;

    Ok(BootstrapResult {
        names: parameter_names(p, q),
        point_model: point_model.clone(),
        point,
        replicates,
        replicate_ids: ids,
        replicate_models: models,
        summary,
        alpha: boot.alpha,
        requested: boot.replicates,
        dropped,
        retried,
        curve_band,
    })
}
