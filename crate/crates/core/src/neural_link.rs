//! Scalar-to-scalar multilayer perceptron with hand-written backpropagation.
//!
//! # Parameter layout
//!
//! Layers are stored in order `1 -> h[0] -> h[1] -> ... -> h[L-1] -> 1`.
//! Each layer with `in` inputs and `out` outputs contributes `in * out`
//! weights followed by `out` biases. Weights are stored input-major: the
//! weight from input unit `k` to output unit `j` lives at `offset + k * out + j`.

use serde::{Deserialize, Serialize};

use crate::error::{PlsiError, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    /// Returns `(a(z), a'(z))`.
    #[inline]
    fn apply(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let a = z.tanh();
                (a, 1.0 - a * a)
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Softplus => {
                let a = z.max(0.0) + (-z.abs()).exp().ln_1p();
                let d = if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                };
                (a, d)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = PlsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            other => Err(PlsiError::Argument(format!("unknown activation '{other}'"))),
        }
    }
}

/// Hidden-layer widths and activation of the link network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

/// Where one layer's weights and biases sit in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub biases: usize,
}

impl MlpSpec {
    pub fn new(hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = MlpSpec { hidden, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(PlsiError::Config("link network needs at least one hidden layer".into()));
        }
        if self.hidden.contains(&0) {
            return Err(PlsiError::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(1);
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let layer = LayerLayout {
                    fan_in,
                    fan_out,
                    weights: offset,
                    biases: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|l| l.fan_in * l.fan_out + l.fan_out)
            .sum()
    }
}

/// Flat parameter vector of the link network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub flat: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpParams {
            flat: vec![0.0; spec.param_count()],
        }
    }

    pub fn check(&self, spec: &MlpSpec) -> Result<()> {
        let want = spec.param_count();
        if self.flat.len() != want {
            return Err(PlsiError::Shape(format!(
                "link network expects {want} parameters, got {}",
                self.flat.len()
            )));
        }
        Ok(())
    }
}

/// He initialization: weights `N(0, 2 / fan_in)`, biases zero.
pub fn he_init(rng: &mut Rng, spec: &MlpSpec) -> MlpParams {
    let mut params = MlpParams::zeros(spec);
    for layer in spec.layout() {
        let sd = (2.0 / layer.fan_in as f64).sqrt();
        for w in &mut params.flat[layer.weights..layer.biases] {
            *w = sd * rng.normal();
        }
    }
    params
}

/// Activations cached by [`forward`] for use in [`backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<f64>,
    layout: Vec<LayerLayout>,
    /// Post-activation outputs of each hidden layer, `n x width` row-major.
    acts: Vec<Vec<f64>>,
    /// Activation derivatives at the pre-activations, same shape as `acts`.
    dacts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let (x, y) = (&a[4 * c..4 * c + 4], &b[4 * c..4 * c + 4]);
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn ensure_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PlsiError::NumericOverflow { layer })
    }
}

/// Evaluates `g(s)` for every entry of `s`, keeping what backprop needs.
pub fn forward(params: &MlpParams, spec: &MlpSpec, s: &[f64]) -> Result<(Vec<f64>, Tape)> {
    params.check(spec)?;
    let layout = spec.layout();
    let theta = &params.flat;
    let n = s.len();
    let hidden = layout.len() - 1;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(hidden);
    let mut dacts: Vec<Vec<f64>> = Vec::with_capacity(hidden);

    // Scalar input layer.
    let first = layout[0];
    let w = &theta[first.weights..first.biases];
    let b = &theta[first.biases..first.biases + first.fan_out];
    let width = first.fan_out;
    let mut act = vec![0.0; n * width];
    let mut dact = vec![0.0; n * width];
    for (i, &si) in s.iter().enumerate() {
        let (a_row, d_row) = (
            &mut act[i * width..(i + 1) * width],
            &mut dact[i * width..(i + 1) * width],
        );
        for j in 0..width {
            let (a, d) = spec.activation.apply(b[j] + w[j] * si);
            a_row[j] = a;
            d_row[j] = d;
        }
    }
    ensure_finite(&act, 0)?;
    acts.push(act);
    dacts.push(dact);

    for (l, layer) in layout.iter().enumerate().take(hidden).skip(1) {
        let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
        let w = &theta[layer.weights..layer.biases];
        let b = &theta[layer.biases..layer.biases + fan_out];
        let prev = &acts[l - 1];
        let mut pre = vec![0.0; n * fan_out];
        for i in 0..n {
            let out = &mut pre[i * fan_out..(i + 1) * fan_out];
            out.copy_from_slice(b);
            let inp = &prev[i * fan_in..(i + 1) * fan_in];
            for (k, &a) in inp.iter().enumerate() {
                let wk = &w[k * fan_out..(k + 1) * fan_out];
                for (o, &wkj) in out.iter_mut().zip(wk) {
                    *o += a * wkj;
                }
            }
        }
        let mut dact = vec![0.0; n * fan_out];
        for (z, d) in pre.iter_mut().zip(dact.iter_mut()) {
            let (a, da) = spec.activation.apply(*z);
            *z = a;
            *d = da;
        }
        ensure_finite(&pre, l)?;
        acts.push(pre);
        dacts.push(dact);
    }

    let last = layout[hidden];
    let w = &theta[last.weights..last.biases];
    let b0 = theta[last.biases];
    let width = last.fan_in;
    let prev = &acts[hidden - 1];
    let out: Vec<f64> = (0..n)
        .map(|i| b0 + dot4(&prev[i * width..(i + 1) * width], w))
        .collect();
    ensure_finite(&out, hidden)?;

    Ok((
        out,
        Tape {
            inputs: s.to_vec(),
            layout,
            acts,
            dacts,
        },
    ))
}

/// Convenience wrapper around [`forward`] that drops the tape.
pub fn evaluate(params: &MlpParams, spec: &MlpSpec, s: &[f64]) -> Result<Vec<f64>> {
    forward(params, spec, s).map(|(out, _)| out)
}

/// Gradients of `sum_i upstream[i] * g(s_i)` with respect to the network
/// parameters and to each input `s_i`.
pub fn backward(params: &MlpParams, tape: &Tape, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = tape.len();
    if upstream.len() != n {
        return Err(PlsiError::Shape(format!(
            "upstream gradient has length {} but tape holds {n} inputs",
            upstream.len()
        )));
    }
    let layout = &tape.layout;
    let theta = &params.flat;
    let expected: usize = layout.iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum();
    if theta.len() != expected {
        return Err(PlsiError::Shape("parameters do not match the tape".into()));
    }
    let mut grad = vec![0.0; theta.len()];
    let hidden = layout.len() - 1;

    // Output layer: g = b + w . a_last
    let last = layout[hidden];
    let width = last.fan_in;
    let w_out = &theta[last.weights..last.biases];
    let a_last = &tape.acts[hidden - 1];
    let d_last = &tape.dacts[hidden - 1];
    let mut delta = vec![0.0; n * width];
    {
        let (gw, gb) = grad[last.weights..].split_at_mut(width);
        for i in 0..n {
            let u = upstream[i];
            if u == 0.0 {
                continue;
            }
            gb[0] += u;
            let a = &a_last[i * width..(i + 1) * width];
            let d = &d_last[i * width..(i + 1) * width];
            let dl = &mut delta[i * width..(i + 1) * width];
            for k in 0..width {
                gw[k] += u * a[k];
                dl[k] = u * w_out[k] * d[k];
            }
        }
    }

    // Hidden-to-hidden layers, last to first.
    for l in (1..hidden).rev() {
        let layer = layout[l];
        let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
        let w = &theta[layer.weights..layer.biases];
        let a_prev = &tape.acts[l - 1];
        let d_prev = &tape.dacts[l - 1];
        let mut delta_prev = vec![0.0; n * fan_in];
        let (gw, rest) = grad[layer.weights..].split_at_mut(fan_in * fan_out);
        let gb = &mut rest[..fan_out];
        for i in 0..n {
            let dl = &delta[i * fan_out..(i + 1) * fan_out];
            for (g, &d) in gb.iter_mut().zip(dl) {
                *g += d;
            }
            let a = &a_prev[i * fan_in..(i + 1) * fan_in];
            let dp = &mut delta_prev[i * fan_in..(i + 1) * fan_in];
            let dd = &d_prev[i * fan_in..(i + 1) * fan_in];
            for k in 0..fan_in {
                let gk = &mut gw[k * fan_out..(k + 1) * fan_out];
                let ak = a[k];
                for (g, &d) in gk.iter_mut().zip(dl) {
                    *g += ak * d;
                }
                dp[k] = dot4(&w[k * fan_out..(k + 1) * fan_out], dl) * dd[k];
            }
        }
        delta = delta_prev;
    }

    // Scalar input layer.
    let first = layout[0];
    let width = first.fan_out;
    let w_in = &theta[first.weights..first.biases];
    let mut grad_s = vec![0.0; n];
    {
        let (gw, rest) = grad[first.weights..].split_at_mut(width);
        let gb = &mut rest[..width];
        for i in 0..n {
            let dl = &delta[i * width..(i + 1) * width];
            let si = tape.inputs[i];
            for j in 0..width {
                gw[j] += si * dl[j];
                gb[j] += dl[j];
            }
            grad_s[i] = dot4(w_in, dl);
        }
    }
    Ok((grad, grad_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_unit() -> (MlpSpec, MlpParams) {
        let spec = MlpSpec::new(vec![1], Activation::Tanh).unwrap();
        // layer0: w1, b1 ; layer1: w2, b2
        let params = MlpParams {
            flat: vec![1.0, 0.0, 2.0, 0.0],
        };
        (spec, params)
    }

    #[test]
    fn layout_offsets() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu).unwrap();
        let layout = spec.layout();
        assert_eq!(layout.len(), 3);
        assert_eq!((layout[0].weights, layout[0].biases), (0, 3));
        assert_eq!((layout[1].weights, layout[1].biases), (6, 12));
        assert_eq!((layout[2].weights, layout[2].biases), (14, 16));
        assert_eq!(spec.param_count(), 17);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MlpSpec::new(vec![], Activation::Tanh).is_err());
        assert!(MlpSpec::new(vec![4, 0], Activation::Tanh).is_err());
    }

    #[test]
    fn zero_network_is_zero() {
        let spec = MlpSpec::default();
        let out = evaluate(&MlpParams::zeros(&spec), &spec, &[-3.0, 0.0, 7.5]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn hand_set_single_unit() {
        let (spec, params) = single_unit();
        let (out, tape) = forward(&params, &spec, &[0.5]).unwrap();
        assert!((out[0] - 0.924_234_3).abs() < 1e-6);
        let (_, grad_s) = backward(&params, &tape, &[1.0]).unwrap();
        assert!((grad_s[0] - 1.572_895).abs() < 1e-6);
    }

    #[test]
    fn batching_is_a_pure_map() {
        let spec = MlpSpec::new(vec![5, 4], Activation::Softplus).unwrap();
        let params = he_init(&mut Rng::new(2), &spec);
        let both = evaluate(&params, &spec, &[0.3, -1.2]).unwrap();
        let a = evaluate(&params, &spec, &[0.3]).unwrap();
        let b = evaluate(&params, &spec, &[-1.2]).unwrap();
        assert_eq!(both, vec![a[0], b[0]]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = MlpSpec::default();
        let params = he_init(&mut Rng::new(4), &spec);
        let (_, tape) = forward(&params, &spec, &[0.1, 0.2, 0.3]).unwrap();
        let (gt, gs) = backward(&params, &tape, &[0.0; 3]).unwrap();
        assert!(gt.iter().all(|&g| g == 0.0));
        assert!(gs.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn upstream_length_checked() {
        let (spec, params) = single_unit();
        let (_, tape) = forward(&params, &spec, &[0.5, 0.1]).unwrap();
        assert!(matches!(backward(&params, &tape, &[1.0]), Err(PlsiError::Shape(_))));
    }

    #[test]
    fn overflow_names_layer() {
        let spec = MlpSpec::new(vec![2], Activation::Relu).unwrap();
        let params = MlpParams {
            flat: vec![1e300, 1e300, 0.0, 0.0, 1e300, 1e300, 0.0],
        };
        match forward(&params, &spec, &[1e10]) {
            Err(PlsiError::NumericOverflow { layer }) => assert_eq!(layer, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn he_init_zero_biases_and_deterministic() {
        let spec = MlpSpec::default();
        let a = he_init(&mut Rng::new(8), &spec);
        let b = he_init(&mut Rng::new(8), &spec);
        assert_eq!(a, b);
        for layer in spec.layout() {
            assert!(a.flat[layer.biases..layer.biases + layer.fan_out]
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn he_init_first_layer_variance() {
        // fan_in = 1 for the scalar input, so the target variance is 2.
        let spec = MlpSpec::new(vec![64], Activation::Tanh).unwrap();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for seed in 0..100_000u64 {
            let params = he_init(&mut Rng::new(seed), &spec);
            let w = params.flat[0];
            sum += w;
            sum_sq += w * w;
            count += 1.0;
        }
        let var = sum_sq / count - (sum / count).powi(2);
        assert!((var - 2.0).abs() < 0.1, "variance {var}");
    }

    /// Central finite differences of `sum_i u_i g(s_i)`.
    fn fd_check(spec: &MlpSpec, params: &MlpParams, s: &[f64], u: &[f64]) -> f64 {
        let h = 1e-5;
        let objective = |p: &MlpParams, s: &[f64]| -> f64 {
            evaluate(p, spec, s)
                .unwrap()
                .iter()
                .zip(u)
                .map(|(g, w)| g * w)
                .sum()
        };
        let (_, tape) = forward(params, spec, s).unwrap();
        let (gt, gs) = backward(params, &tape, u).unwrap();
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs().max(b.abs()).max(1e-3));
        for k in 0..params.flat.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.flat[k] += h;
            minus.flat[k] -= h;
            let fd = (objective(&plus, s) - objective(&minus, s)) / (2.0 * h);
            worst = worst.max(rel(fd, gt[k]));
        }
        for i in 0..s.len() {
            let mut sp = s.to_vec();
            let mut sm = s.to_vec();
            sp[i] += h;
            sm[i] -= h;
            let fd = (objective(params, &sp) - objective(params, &sm)) / (2.0 * h);
            worst = worst.max(rel(fd, gs[i]));
        }
        worst
    }

    #[test]
    fn gradient_check_random_networks() {
        let mut rng = Rng::new(1234);
        let activations = [Activation::Tanh, Activation::Softplus, Activation::Relu];
        for trial in 0..50 {
            let depth = 1 + rng.below(3);
            let hidden: Vec<usize> = (0..depth).map(|_| 1 + rng.below(6)).collect();
            let spec = MlpSpec::new(hidden, activations[trial % 3]).unwrap();
            let mut params = he_init(&mut rng, &spec);
            for v in &mut params.flat {
                *v += 0.1 * rng.normal();
            }
            let n = 1 + rng.below(5);
            let s: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
            let u: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let err = fd_check(&spec, &params, &s, &u);
            assert!(err < 1e-4, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn relu_network_is_piecewise_linear() {
        let spec = MlpSpec::new(vec![8, 8], Activation::Relu).unwrap();
        let params = he_init(&mut Rng::new(77), &spec);
        let pattern = |s: f64| -> Vec<bool> {
            let (_, tape) = forward(&params, &spec, &[s]).unwrap();
            tape.dacts.iter().flatten().map(|&d| d > 0.0).collect()
        };
        let mut checked = 0;
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let a = 3.0 * rng.normal();
            let b = a + 0.05 * rng.uniform();
            let mid = 0.5 * (a + b);
            if pattern(a) == pattern(b) && pattern(a) == pattern(mid) {
                let g = evaluate(&params, &spec, &[a, b, mid]).unwrap();
                assert!((g[2] - 0.5 * (g[0] + g[1])).abs() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }
}
