//! Per-family losses (to minimize) and their gradients with respect to the
//! additive predictor, plus the penalty that anchors the link at the origin.
//!
//! All losses are weighted means: with weights `w_i` (all ones by default)
//! the Gaussian loss is `sum w_i (y_i - eta_i)^2 / sum w_i`, and the Cox loss
//! is normalized by the total weight of observed events.

use crate::data::Outcome;
use crate::error::{PlsiError, Result};
use crate::model::sigmoid;
use crate::neural_link::{self, MlpParams, MlpSpec};

/// Loss value and its gradient with respect to each `eta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_obs_grad: Vec<f64>,
}

fn check_lengths(n_y: usize, eta: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if n_y != eta.len() {
        return Err(PlsiError::Shape(format!(
            "{n_y} outcomes but {} predictor values",
            eta.len()
        )));
    }
    if n_y == 0 {
        return Err(PlsiError::EmptyData("loss over zero observations".into()));
    }
    match weights {
        None => Ok(n_y as f64),
        Some(w) if w.len() != n_y => Err(PlsiError::Shape(format!(
            "{} weights for {n_y} observations",
            w.len()
        ))),
        Some(w) => {
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                Ok(total)
            } else {
                Err(PlsiError::Domain("weights sum to zero".into()))
            }
        }
    }
}

#[inline]
fn weight(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn loss_gaussian(y: &[f64], eta: &[f64]) -> Result<LossValue> {
    loss_gaussian_weighted(y, eta, None)
}

pub fn loss_gaussian_weighted(y: &[f64], eta: &[f64], weights: Option<&[f64]>) -> Result<LossValue> {
    let wsum = check_lengths(y.len(), eta, weights)?;
    let mut total = 0.0;
    let grad = (0..y.len())
        .map(|i| {
            let w = weight(weights, i);
            let r = y[i] - eta[i];
            total += w * r * r;
            -2.0 * w * r / wsum
        })
        .collect();
    Ok(LossValue {
        total: total / wsum,
        per_obs_grad: grad,
    })
}

pub fn loss_binomial(y: &[f64], eta: &[f64]) -> Result<LossValue> {
    loss_binomial_weighted(y, eta, None)
}

pub fn loss_binomial_weighted(y: &[f64], eta: &[f64], weights: Option<&[f64]>) -> Result<LossValue> {
    let wsum = check_lengths(y.len(), eta, weights)?;
    if let Some((i, v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(PlsiError::Domain(format!(
            "binomial outcome must be 0 or 1; observation {} is {v}",
            i + 1
        )));
    }
    let mut total = 0.0;
    let grad = (0..y.len())
        .map(|i| {
            let w = weight(weights, i);
            total += w * (log1p_exp(eta[i]) - y[i] * eta[i]);
            w * (sigmoid(eta[i]) - y[i]) / wsum
        })
        .collect();
    Ok(LossValue {
        total: total / wsum,
        per_obs_grad: grad,
    })
}

/// Poisson negative log-likelihood without the constant `log y!` term.
pub fn loss_poisson(y: &[f64], eta: &[f64]) -> Result<LossValue> {
    loss_poisson_weighted(y, eta, None)
}

pub fn loss_poisson_weighted(y: &[f64], eta: &[f64], weights: Option<&[f64]>) -> Result<LossValue> {
    let wsum = check_lengths(y.len(), eta, weights)?;
    if let Some((i, v)) = y.iter().enumerate().find(|(_, &v)| !(v >= 0.0)) {
        return Err(PlsiError::Domain(format!(
            "poisson outcome must be non-negative; observation {} is {v}",
            i + 1
        )));
    }
    let mut total = 0.0;
    let grad = (0..y.len())
        .map(|i| {
            let w = weight(weights, i);
            let mu = eta[i].exp();
            total += w * (mu - y[i] * eta[i]);
            w * (mu - y[i]) / wsum
        })
        .collect();
    Ok(LossValue {
        total: total / wsum,
        per_obs_grad: grad,
    })
}

/// Negative Cox partial log-likelihood per event, Breslow ties.
pub fn loss_cox(time: &[f64], event: &[bool], eta: &[f64]) -> Result<LossValue> {
    loss_cox_weighted(time, event, eta, None)
}

/// Weighted Breslow partial likelihood computed with one sorted sweep.
///
/// Observations are grouped by distinct time. Walking groups from the latest
/// time backwards accumulates the risk-set sums `S_g = sum_{t_j >= t_g} w_j e^eta_j`;
/// walking forwards accumulates `C_k = sum_{g: t_g <= t_k} d_g / S_g`, where
/// `d_g` is the event weight of group `g`. Then
/// `dL/deta_k = -(w_k delta_k - w_k e^eta_k C_k) / D`.
pub fn loss_cox_weighted(
    time: &[f64],
    event: &[bool],
    eta: &[f64],
    weights: Option<&[f64]>,
) -> Result<LossValue> {
    check_lengths(time.len(), eta, weights)?;
    if event.len() != time.len() {
        return Err(PlsiError::Shape(format!(
            "{} times but {} event flags",
            time.len(),
            event.len()
        )));
    }
    if let Some((i, t)) = time.iter().enumerate().find(|(_, &t)| !(t > 0.0 && t.is_finite())) {
        return Err(PlsiError::Domain(format!(
            "survival time must be positive; observation {} is {t}",
            i + 1
        )));
    }
    let n = time.len();
    let event_weight: f64 = (0..n).filter(|&i| event[i]).map(|i| weight(weights, i)).sum();
    if !event.iter().any(|&e| e) || !(event_weight > 0.0) {
        return Err(PlsiError::NoEvents);
    }

    let shift = eta.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    let risk: Vec<f64> = (0..n).map(|i| weight(weights, i) * (eta[i] - shift).exp()).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
    // Group boundaries in ascending time order.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for k in 1..=n {
        if k == n || time[order[k]] != time[order[start]] {
            groups.push((start, k));
            start = k;
        }
    }

    let mut total = 0.0;
    let mut hazard_increment = vec![0.0; groups.len()];
    let mut running = 0.0;
    for (g, &(lo, hi)) in groups.iter().enumerate().rev() {
        running += order[lo..hi].iter().map(|&i| risk[i]).sum::<f64>();
        let log_s = running.ln() + shift;
        let mut d_g = 0.0;
        for &i in &order[lo..hi] {
            if event[i] {
                let w = weight(weights, i);
                total += w * (eta[i] - log_s);
                d_g += w;
            }
        }
        hazard_increment[g] = d_g / running;
    }

    let mut grad = vec![0.0; n];
    let mut cumulative = 0.0;
    for (g, &(lo, hi)) in groups.iter().enumerate() {
        cumulative += hazard_increment[g];
        for &i in &order[lo..hi] {
            let w = weight(weights, i);
            let observed = if event[i] { w } else { 0.0 };
            grad[i] = -(observed - risk[i] * cumulative) / event_weight;
        }
    }
    Ok(LossValue {
        total: -total / event_weight,
        per_obs_grad: grad,
    })
}

/// Dispatches to the family's loss.
pub fn family_loss(outcome: &Outcome, eta: &[f64], weights: Option<&[f64]>) -> Result<LossValue> {
    match outcome {
        Outcome::Gaussian(y) => loss_gaussian_weighted(y, eta, weights),
        Outcome::Binomial(y) => loss_binomial_weighted(y, eta, weights),
        Outcome::Poisson(y) => loss_poisson_weighted(y, eta, weights),
        Outcome::Cox { time, event } => loss_cox_weighted(time, event, eta, weights),
    }
}

/// `weight * g(0)^2` and its gradient with respect to the link parameters.
pub fn anchoring_penalty(theta: &MlpParams, spec: &MlpSpec, weight: f64) -> Result<(f64, Vec<f64>)> {
    if weight < 0.0 {
        return Err(PlsiError::Config("anchoring weight must be non-negative".into()));
    }
    if weight == 0.0 {
        return Ok((0.0, vec![0.0; theta.flat.len()]));
    }
    let (g0, tape) = neural_link::forward(theta, spec, &[0.0])?;
    let (grad, _) = neural_link::backward(theta, &tape, &[2.0 * weight * g0[0]])?;
    Ok((weight * g0[0] * g0[0], grad))
}
