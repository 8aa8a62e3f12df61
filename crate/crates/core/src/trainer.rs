//! Joint minibatch optimization of `(gamma, beta, theta)` with Adam, followed
//! after every step by the sign rule and unit-norm projection on `beta`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Family, Outcome};
use crate::error::{PlsiError, Result};
use crate::model::{project_identifiable, ModelParams, UNIT_NORM_TOL};
use crate::neural_link::{self, he_init, Activation, MlpParams, MlpSpec};
use crate::numerics::{dot, norm2, Matrix, Rng};
use crate::objectives::{anchoring_penalty, family_loss};

/// Starting direction for `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaInit {
    /// Direction and covariate effects of a linear-predictor fit under the
    /// same loss; falls back to the uniform direction when that fit is flat.
    LinearFit,
    /// `(1, ..., 1) / sqrt(p)`; no randomness.
    UniformSimplexDirection,
    /// Uniform on the unit sphere, then sign-fixed.
    RandomSphere,
}

impl std::str::FromStr for BetaInit {
    type Err = PlsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_simplex_direction" | "uniform" => Ok(BetaInit::UniformSimplexDirection),
            "random_sphere" | "random" => Ok(BetaInit::RandomSphere),
            "linear_fit" | "linear" => Ok(BetaInit::LinearFit),
            _ => Err(PlsiError::Argument(format!(
                "unknown beta init {s:?} (expected linear_fit, uniform_simplex_direction or random_sphere)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub family: Family,
    pub mlp: MlpSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Weight of `g(0)^2`.
    pub anchoring_weight: f64,
    /// Weight of the mean squared index `mean(s_i^2)` over the minibatch.
    pub index_centering_weight: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Negate the first Adam moment of `beta` when `beta` is sign-flipped.
    pub flip_momentum: bool,
    pub beta_init: BetaInit,
    /// Cox only: form risk sets within minibatches instead of using the full batch.
    pub cox_minibatch: bool,
    /// After each step, move `g(0)` out of the network's output bias and into
    /// the intercept (an exact reparameterization; the loss is unchanged).
    pub recenter_link: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            family: Family::Gaussian,
            mlp: MlpSpec::default(),
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            anchoring_weight: 1.0,
            index_centering_weight: 0.0,
            early_stop_patience: 20,
            validation_fraction: 0.1,
            seed: 0,
            flip_momentum: true,
            beta_init: BetaInit::LinearFit,
            cox_minibatch: false,
            recenter_link: true,
        }
    }
}

impl FitConfig {
    /// Defaults for `family`. Cox fits use the full batch, so they take far
    /// fewer steps per epoch and get a larger learning rate (1e-2).
    pub fn for_family(family: Family) -> Self {
        let learning_rate = match family {
            Family::Cox => 1e-2,
            _ => 1e-3,
        };
        FitConfig {
            family,
            learning_rate,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        let bad = |msg: &str| Err(PlsiError::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if !(self.anchoring_weight >= 0.0) || !(self.index_centering_weight >= 0.0) {
            return bad("penalty weights must be non-negative");
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 0.5)");
        }
        Ok(())
    }
}

/// Optional replacements for selected `FitConfig` fields, as read from
/// config files and command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOverrides {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub anchoring_weight: Option<f64>,
    pub index_centering_weight: Option<f64>,
    pub early_stop_patience: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub flip_momentum: Option<bool>,
    pub beta_init: Option<BetaInit>,
    pub cox_minibatch: Option<bool>,
    pub recenter_link: Option<bool>,
}

impl FitOverrides {
    pub fn apply(&self, mut cfg: FitConfig) -> Result<FitConfig> {
        if self.hidden.is_some() || self.activation.is_some() {
            let hidden = self.hidden.clone().unwrap_or_else(|| cfg.mlp.hidden.clone());
            let activation = self.activation.unwrap_or(cfg.mlp.activation);
            cfg.mlp = MlpSpec::new(hidden, activation)?;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            epochs,
            batch_size,
            learning_rate,
            anchoring_weight,
            index_centering_weight,
            early_stop_patience,
            validation_fraction,
            flip_momentum,
            beta_init,
            cox_minibatch,
            recenter_link
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-epoch progress sent to an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Mean minibatch objective (loss plus penalties) per epoch.
    pub loss_history: Vec<f64>,
    /// Validation loss per epoch when early stopping is active.
    pub val_history: Vec<f64>,
    /// Number of epochs actually run.
    pub stopped_epoch: usize,
    /// Epoch whose parameters were returned (equals `stopped_epoch` without early stopping).
    pub best_epoch: usize,
    pub flips: usize,
    pub config: FitConfig,
}

/// Adam first and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if state.m.len() != params.len() || grads.len() != params.len() {
        return Err(PlsiError::Shape(format!(
            "Adam state has {} entries, parameters {}, gradients {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Uniform random permutation of `0..n` by Fisher-Yates.
pub fn shuffle_epoch(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        perm.swap(i, j);
    }
    perm
}

/// Objective value and its gradient blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
}

// Flat parameter vector layout used by the optimizer: [gamma | beta | theta].
struct Packing {
    p: usize,
    q: usize,
}

impl Packing {
    fn beta_range(&self) -> std::ops::Range<usize> {
        self.q..self.q + self.p
    }
}

/// Loss plus penalties on the rows in `rows`, with gradient packed as
/// `[gamma | beta | theta]`.
fn batch_objective(
    w: &[f64],
    pack: &Packing,
    data: &Dataset,
    rows: &[usize],
    config: &FitConfig,
) -> Result<(f64, f64, Vec<f64>)> {
    let (p, q) = (pack.p, pack.q);
    let gamma = &w[..q];
    let beta = &w[q..q + p];
    let theta = MlpParams {
        flat: w[q + p..].to_vec(),
    };
    let s: Vec<f64> = rows.iter().map(|&i| dot(data.x.row(i), beta)).collect();
    let (g, tape) = neural_link::forward(&theta, &config.mlp, &s)?;
    let eta: Vec<f64> = rows
        .iter()
        .zip(&g)
        .map(|(&i, gi)| gi + dot(data.z.row(i), gamma))
        .collect();
    let outcome = data.outcome.select(rows);
    let weights: Option<Vec<f64>> = data
        .weights
        .as_ref()
        .map(|wt| rows.iter().map(|&i| wt[i]).collect());
    let loss = family_loss(&outcome, &eta, weights.as_deref())?;

    let mut grad = vec![0.0; w.len()];
    for (k, &i) in rows.iter().enumerate() {
        let ge = loss.per_obs_grad[k];
        for (gg, zv) in grad[..q].iter_mut().zip(data.z.row(i)) {
            *gg += ge * zv;
        }
    }
    let (grad_theta, mut grad_s) = neural_link::backward(&theta, &tape, &loss.per_obs_grad)?;
    let mut value = loss.total;

    if config.index_centering_weight > 0.0 {
        let b = s.len() as f64;
        let c = config.index_centering_weight;
        value += c * s.iter().map(|v| v * v).sum::<f64>() / b;
        for (gs, sv) in grad_s.iter_mut().zip(&s) {
            *gs += 2.0 * c * sv / b;
        }
    }
    for (k, &i) in rows.iter().enumerate() {
        let gs = grad_s[k];
        for (gb, xv) in grad[q..q + p].iter_mut().zip(data.x.row(i)) {
            *gb += gs * xv;
        }
    }
    grad[q + p..].copy_from_slice(&grad_theta);

    if config.anchoring_weight > 0.0 {
        let (pen, pen_grad) = anchoring_penalty(&theta, &config.mlp, config.anchoring_weight)?;
        value += pen;
        for (gt, pg) in grad[q + p..].iter_mut().zip(&pen_grad) {
            *gt += pg;
        }
    }
    Ok((value, loss.total, grad))
}

/// Full training objective on all of `data` at `params`, with gradients.
///
/// The `beta` gradient is the unconstrained Euclidean gradient.
pub fn objective_and_gradient(
    params: &ModelParams,
    data: &Dataset,
    config: &FitConfig,
) -> Result<ObjectiveGradient> {
    params.theta.check(&config.mlp)?;
    if params.p() != data.p() || params.q() != data.q() {
        return Err(PlsiError::Shape("parameters do not match the data".into()));
    }
    let pack = Packing {
        p: params.p(),
        q: params.q(),
    };
    let w = pack_params(params);
    let rows: Vec<usize> = (0..data.n()).collect();
    let (value, _, grad) = batch_objective(&w, &pack, data, &rows, config)?;
    Ok(ObjectiveGradient {
        value,
        gamma: grad[..pack.q].to_vec(),
        beta: grad[pack.beta_range()].to_vec(),
        theta: grad[pack.q + pack.p..].to_vec(),
    })
}

fn pack_params(params: &ModelParams) -> Vec<f64> {
    let mut w = Vec::with_capacity(params.q() + params.p() + params.theta.flat.len());
    w.extend_from_slice(&params.gamma);
    w.extend_from_slice(&params.beta);
    w.extend_from_slice(&params.theta.flat);
    w
}

fn unpack_params(w: &[f64], pack: &Packing, mlp: &MlpSpec) -> ModelParams {
    ModelParams {
        gamma: w[..pack.q].to_vec(),
        beta: w[pack.beta_range()].to_vec(),
        theta: MlpParams {
            flat: w[pack.q + pack.p..].to_vec(),
        },
        mlp: mlp.clone(),
    }
}

const PREFIT_STEPS: usize = 400;

/// Full-batch Adam fit of the linear predictor `X b + Z gamma`.
fn linear_prefit(data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, p, q) = (data.n(), data.p(), data.q());
    let mut w = vec![0.0; p + q];
    let mut adam = AdamState::new(p + q);
    let mut eta = vec![0.0; n];
    let mut grad = vec![0.0; p + q];
    for step in 0..PREFIT_STEPS {
        for (i, e) in eta.iter_mut().enumerate() {
            *e = dot(data.x.row(i), &w[..p]) + dot(data.z.row(i), &w[p..]);
        }
        let lv = family_loss(&data.outcome, &eta, data.weights.as_deref())?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, &gi) in lv.per_obs_grad.iter().enumerate() {
            for (g, &v) in grad[..p].iter_mut().zip(data.x.row(i)) {
                *g += gi * v;
            }
            for (g, &v) in grad[p..].iter_mut().zip(data.z.row(i)) {
                *g += gi * v;
            }
        }
        let lr = if step < PREFIT_STEPS * 3 / 4 { 0.05 } else { 0.005 };
        adam_step(&mut adam, &mut w, &grad, lr, (0.9, 0.999), 1e-8)?;
    }
    let gamma = w.split_off(p);
    Ok((w, gamma))
}

fn initial_params(data: &Dataset, config: &FitConfig) -> Result<ModelParams> {
    let p = data.p();
    let uniform = vec![1.0 / (p as f64).sqrt(); p];
    let mut rng = Rng::new(config.seed).derive(0);
    let mut gamma = vec![0.0; data.q()];
    let beta = match config.beta_init {
        BetaInit::UniformSimplexDirection => uniform,
        BetaInit::RandomSphere => {
            let raw: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            project_identifiable(&raw)?.0
        }
        BetaInit::LinearFit => match linear_prefit(data) {
            Ok((b, g)) if b.iter().chain(&g).all(|v| v.is_finite()) => {
                gamma = g;
                if norm2(&b) > 1e-8 {
                    project_identifiable(&b)?.0
                } else {
                    uniform
                }
            }
            // Training reports any real problem with the data.
            _ => uniform,
        },
    };
    let theta = he_init(&mut rng, &config.mlp);
    Ok(ModelParams {
        beta,
        gamma,
        theta,
        mlp: config.mlp.clone(),
    })
}

/// Index of the first all-ones column of `z`.
pub fn intercept_column(z: &Matrix) -> Option<usize> {
    if z.rows() == 0 {
        return None;
    }
    (0..z.cols()).find(|&j| (0..z.rows()).all(|i| z.get(i, j) == 1.0))
}

/// Where the link level goes when it is moved out of the network.
#[derive(Debug, Clone, Copy)]
enum LevelSink {
    Intercept(usize),
    /// The family's loss ignores constant shifts of `eta`.
    Discard,
}

fn level_sink(data: &Dataset, config: &FitConfig) -> Option<LevelSink> {
    if !config.recenter_link {
        return None;
    }
    match intercept_column(&data.z) {
        Some(j) => Some(LevelSink::Intercept(j)),
        None if config.family == Family::Cox => Some(LevelSink::Discard),
        None => None,
    }
}

fn recenter(w: &mut [f64], pack: &Packing, mlp: &MlpSpec, sink: LevelSink) -> Result<()> {
    let theta = MlpParams {
        flat: w[pack.q + pack.p..].to_vec(),
    };
    let level = neural_link::evaluate(&theta, mlp, &[0.0])?[0];
    let out_bias = pack.q + pack.p + mlp.layout().last().map_or(0, |l| l.biases);
    w[out_bias] -= level;
    if let LevelSink::Intercept(j) = sink {
        w[j] += level;
    }
    Ok(())
}

fn is_divergence(err: &PlsiError) -> bool {
    matches!(err, PlsiError::NumericOverflow { .. })
}

/// Fits the model from the configured initialization.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    fit_with(data, config, None, &mut |_| {})
}

/// Fits the model, optionally starting from `init`, reporting each epoch.
///
/// With `init` supplied, `config.epochs` may be zero, in which case `init`
/// is returned unchanged.
pub fn fit_with(
    data: &Dataset,
    config: &FitConfig,
    init: Option<&ModelParams>,
    observer: &mut dyn FnMut(&EpochReport),
) -> Result<FitResult> {
    config.validate()?;
    data.validate()?;
    if data.n() == 0 {
        return Err(PlsiError::EmptyData("no observations to fit".into()));
    }
    if data.p() == 0 {
        return Err(PlsiError::Shape("at least one exposure column is required".into()));
    }
    if data.family() != config.family {
        return Err(PlsiError::Config(format!(
            "configured family is {} but the data carry a {} outcome",
            config.family,
            data.family()
        )));
    }
    if config.epochs == 0 && init.is_none() {
        return Err(PlsiError::Config("epochs must be at least 1".into()));
    }

    // Hold out a validation split for early stopping.
    let root = Rng::new(config.seed);
    let n = data.n();
    let n_val = if config.early_stop_patience > 0 {
        (n as f64 * config.validation_fraction).floor() as usize
    } else {
        0
    };
    let (train_rows, val_rows): (Vec<usize>, Vec<usize>) = if n_val >= 1 && n - n_val >= 1 {
        let perm = shuffle_epoch(&mut root.derive(1), n);
        let mut val = perm[..n_val].to_vec();
        let mut train = perm[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        (train, val)
    } else {
        ((0..n).collect(), Vec::new())
    };
    let start = match init {
        Some(params) => {
            if params.p() != data.p() || params.q() != data.q() || params.mlp != config.mlp {
                return Err(PlsiError::Shape(
                    "warm-start parameters do not match the data or network".into(),
                ));
            }
            params.check()?;
            params.clone()
        }
        None => initial_params(&data.select(&train_rows), config)?,
    };
    let pack = Packing {
        p: data.p(),
        q: data.q(),
    };
    let mut w = pack_params(&start);

    let mut early_stopping = !val_rows.is_empty();
    if early_stopping && config.family == Family::Cox {
        if let Outcome::Cox { event, .. } = &data.outcome {
            if !val_rows.iter().any(|&i| event[i]) {
                early_stopping = false;
            }
        }
    }

    let n_train = train_rows.len();
    let full_batch = config.family == Family::Cox && !config.cox_minibatch;
    let batch_size = if full_batch {
        n_train
    } else {
        config.batch_size.min(n_train)
    };

    let mut adam = AdamState::new(w.len());
    let shuffle_root = root.derive(2);
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut val_history = Vec::new();
    let mut flips = 0;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let beta_range = pack.beta_range();
    let sink = level_sink(data, config);

    for epoch in 1..=config.epochs {
        let perm = shuffle_epoch(&mut shuffle_root.derive(epoch as u64), n_train);
        let order: Vec<usize> = perm.iter().map(|&k| train_rows[k]).collect();
        let mut epoch_total = 0.0;
        let mut epoch_count = 0usize;
        for rows in order.chunks(batch_size) {
            let (value, grad) = match batch_objective(&w, &pack, data, rows, config) {
                Ok((value, _, grad)) => (value, grad),
                // A minibatch without events carries no partial-likelihood information.
                Err(PlsiError::NoEvents) if !full_batch => continue,
                Err(e) if is_divergence(&e) => {
                    return Err(PlsiError::Divergence {
                        epoch,
                        loss: f64::NAN,
                        learning_rate: config.learning_rate,
                    })
                }
                Err(e) => return Err(e),
            };
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PlsiError::Divergence {
                    epoch,
                    loss: value,
                    learning_rate: config.learning_rate,
                });
            }
            epoch_total += value * rows.len() as f64;
            epoch_count += rows.len();
            adam_step(
                &mut adam,
                &mut w,
                &grad,
                config.learning_rate,
                config.adam_betas,
                config.adam_eps,
            )?;
            let (projected, flipped) = project_identifiable(&w[beta_range.clone()]).map_err(|_| {
                PlsiError::Divergence {
                    epoch,
                    loss: value,
                    learning_rate: config.learning_rate,
                }
            })?;
            w[beta_range.clone()].copy_from_slice(&projected);
            if flipped {
                flips += 1;
                if config.flip_momentum {
                    adam.m[beta_range.clone()].iter_mut().for_each(|m| *m = -*m);
                }
            }
            if let Some(sink) = sink {
                recenter(&mut w, &pack, &config.mlp, sink).map_err(|_| PlsiError::Divergence {
                    epoch,
                    loss: value,
                    learning_rate: config.learning_rate,
                })?;
            }
            debug_assert!((norm2(&w[beta_range.clone()]) - 1.0).abs() <= UNIT_NORM_TOL);
            debug_assert!(w[beta_range.start] >= 0.0);
        }
        epochs_run = epoch;
        if epoch_count == 0 {
            return Err(PlsiError::Data(
                "no minibatch produced a usable objective (no events in any batch)".into(),
            ));
        }
        let train_loss = epoch_total / epoch_count as f64;
        loss_history.push(train_loss);

        let mut val_loss = None;
        if early_stopping {
            let v = match batch_objective(&w, &pack, data, &val_rows, config) {
                Ok((_, loss, _)) => loss,
                Err(e) if is_divergence(&e) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !v.is_finite() {
                return Err(PlsiError::Divergence {
                    epoch,
                    loss: v,
                    learning_rate: config.learning_rate,
                });
            }
            val_history.push(v);
            val_loss = Some(v);
            match &best {
                Some((b, _, _)) if v >= *b => since_best += 1,
                _ => {
                    best = Some((v, epoch, w.clone()));
                    since_best = 0;
                }
            }
        }
        observer(&EpochReport {
            epoch,
            train_loss,
            val_loss,
        });
        if early_stopping && since_best >= config.early_stop_patience {
            break;
        }
    }

    let (final_w, best_epoch) = match best {
        Some((_, epoch, bw)) => (bw, epoch),
        None => (w, epochs_run),
    };
    let params = unpack_params(&final_w, &pack, &config.mlp);
    params.check()?;
    Ok(FitResult {
        params,
        loss_history,
        val_history,
        stopped_epoch: epochs_run,
        best_epoch,
        flips,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut st = AdamState::new(2);
        st.m = vec![0.5, -0.2];
        st.v = vec![0.1, 0.3];
        let mut p = vec![1.0, 2.0];
        let before_m = st.m.clone();
        adam_step(&mut st, &mut p, &[0.0, 0.0], 0.1, (0.9, 0.999), 1e-8).unwrap();
        // Moments decay; params move only by the decayed momentum.
        assert!(st.m.iter().zip(&before_m).all(|(a, b)| a.abs() < b.abs()));
        let mut fresh = AdamState::new(2);
        let mut q = vec![1.0, 2.0];
        adam_step(&mut fresh, &mut q, &[0.0, 0.0], 0.1, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(q, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut st = AdamState::new(1);
        let mut p = vec![0.0];
        adam_step(&mut st, &mut p, &[1.0], 0.1, (0.9, 0.999), 1e-8).unwrap();
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn shuffle_identity_for_one_and_deterministic() {
        assert_eq!(shuffle_epoch(&mut Rng::new(1), 1), vec![0]);
        let a = shuffle_epoch(&mut Rng::new(7), 50);
        let b = shuffle_epoch(&mut Rng::new(7), 50);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn shuffle_three_is_uniform() {
        let mut rng = Rng::new(2024);
        let mut counts = std::collections::HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            *counts.entry(shuffle_epoch(&mut rng, 3)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (perm, c) in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.01, "{perm:?}: {f}");
        }
    }

    fn tiny_data(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x = [rng.normal(), rng.normal(), rng.normal()];
            let z = [1.0, rng.normal()];
            let s = (0.8 * x[0] + 0.6 * x[1]) as f64;
            y.push(s + 0.5 + 0.3 * z[1] + 0.1 * rng.normal());
            xs.extend_from_slice(&x);
            zs.extend_from_slice(&z);
        }
        Dataset::new(
            Matrix::new(n, 3, xs).unwrap(),
            Matrix::new(n, 2, zs).unwrap(),
            Outcome::Gaussian(y),
        )
        .unwrap()
    }

    fn small_config() -> FitConfig {
        FitConfig {
            mlp: MlpSpec::new(vec![8], crate::neural_link::Activation::Tanh).unwrap(),
            epochs: 30,
            batch_size: 16,
            learning_rate: 5e-3,
            early_stop_patience: 0,
            ..FitConfig::default()
        }
    }

    #[test]
    fn fit_is_deterministic_and_constrained() {
        let data = tiny_data(120, 3);
        let cfg = small_config();
        let a = fit(&data, &cfg).unwrap();
        let b = fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        a.params.check().unwrap();
        assert!(a.loss_history.iter().all(|l| l.is_finite()));
        assert!(a.loss_history.last().unwrap() < &a.loss_history[0]);
    }

    #[test]
    fn fit_rejects_family_mismatch_and_empty() {
        let data = tiny_data(10, 1);
        let cfg = FitConfig {
            family: Family::Binomial,
            ..small_config()
        };
        assert!(matches!(fit(&data, &cfg), Err(PlsiError::Config(_))));
        let empty = data.select(&[]);
        assert!(matches!(fit(&empty, &small_config()), Err(PlsiError::EmptyData(_))));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let mut data = tiny_data(64, 9);
        if let Outcome::Gaussian(y) = &mut data.outcome {
            y.iter_mut().for_each(|v| *v *= 1e200);
        }
        let cfg = FitConfig {
            learning_rate: 1e150,
            ..small_config()
        };
        match fit(&data, &cfg) {
            Err(PlsiError::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_epochs_from_warm_start_is_identity() {
        let data = tiny_data(60, 4);
        let cfg = small_config();
        let first = fit(&data, &cfg).unwrap();
        let again = fit_with(
            &data,
            &FitConfig { epochs: 0, ..cfg },
            Some(&first.params),
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(again.params, first.params);
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let data = tiny_data(200, 5);
        let cfg = FitConfig {
            early_stop_patience: 3,
            validation_fraction: 0.2,
            epochs: 200,
            ..small_config()
        };
        let mut reports = Vec::new();
        let r = fit_with(&data, &cfg, None, &mut |e| reports.push(*e)).unwrap();
        assert_eq!(reports.len(), r.stopped_epoch);
        assert_eq!(r.val_history.len(), r.stopped_epoch);
        let best = r.val_history[r.best_epoch - 1];
        assert!(r.val_history.iter().all(|&v| v >= best));
    }

    #[test]
    fn index_centering_term_value() {
        let data = tiny_data(20, 6);
        let cfg = FitConfig {
            anchoring_weight: 0.0,
            ..small_config()
        };
        let params = initial_params(&data, &cfg).unwrap();
        let base = objective_and_gradient(&params, &data, &cfg).unwrap().value;
        let with = objective_and_gradient(
            &params,
            &data,
            &FitConfig {
                index_centering_weight: 0.5,
                ..cfg
            },
        )
        .unwrap()
        .value;
        let s = crate::model::index(&params, &data.x).unwrap();
        let ms = s.iter().map(|v| v * v).sum::<f64>() / 20.0;
        assert!((with - base - 0.5 * ms).abs() < 1e-12);
    }

    #[test]
    fn recentering_preserves_predictor_and_zeroes_link_level() {
        let data = tiny_data(30, 8);
        let cfg = small_config();
        let mut params = initial_params(&data, &cfg).unwrap();
        params.theta.flat.iter_mut().for_each(|v| *v += 0.3);
        let before = crate::model::predict_eta(&params, &data.x, &data.z).unwrap();
        let pack = Packing { p: 3, q: 2 };
        let mut w = pack_params(&params);
        recenter(&mut w, &pack, &cfg.mlp, LevelSink::Intercept(0)).unwrap();
        let after_params = unpack_params(&w, &pack, &cfg.mlp);
        let after = crate::model::predict_eta(&after_params, &data.x, &data.z).unwrap();
        for (a, b) in after.0.iter().zip(&before.0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(after_params.link(&[0.0]).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn intercept_column_detection() {
        let z = Matrix::from_rows(&[vec![0.5, 1.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(intercept_column(&z), Some(1));
        let z = Matrix::from_rows(&[vec![0.5, 1.0], vec![2.0, 0.9]]).unwrap();
        assert_eq!(intercept_column(&z), None);
    }

    #[test]
    fn fitted_link_is_anchored() {
        let data = tiny_data(200, 9);
        let r = fit(&data, &FitConfig { epochs: 50, ..small_config() }).unwrap();
        assert!(r.params.link(&[0.0]).unwrap()[0].abs() < 1e-9);
        let literal = fit(
            &data,
            &FitConfig {
                epochs: 50,
                recenter_link: false,
                ..small_config()
            },
        )
        .unwrap();
        assert!(literal.params.link(&[0.0]).unwrap()[0].abs() > 1e-9);
    }
}
