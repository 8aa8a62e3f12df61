//! The partial-linear single-index predictor `g(beta'x) + gamma'z`.

use serde::{Deserialize, Serialize};

use crate::data::Family;
use crate::error::{PlsiError, Result};
use crate::neural_link::{self, MlpParams, MlpSpec};
use crate::numerics::{dot, norm2, Matrix};

/// Tolerance on `||beta|| = 1` enforced after every update.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Fitted or in-progress model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Unit-norm index direction with a non-negative leading coordinate.
    pub beta: Vec<f64>,
    /// Linear coefficients; the first entry is the intercept when `z` has a
    /// constant first column.
    pub gamma: Vec<f64>,
    pub theta: MlpParams,
    pub mlp: MlpSpec,
}

/// Additive predictor `eta_i`, one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor(pub Vec<f64>);

impl ModelParams {
    /// Checks the identifiability constraints and internal shapes.
    pub fn check(&self) -> Result<()> {
        self.theta.check(&self.mlp)?;
        let norm = norm2(&self.beta);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(PlsiError::Domain(format!("index direction has norm {norm}")));
        }
        if leading_sign(&self.beta) < 0.0 {
            return Err(PlsiError::Domain(
                "index direction has a negative leading coordinate".into(),
            ));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    /// Evaluates the fitted link at arbitrary index values.
    pub fn link(&self, s: &[f64]) -> Result<Vec<f64>> {
        neural_link::evaluate(&self.theta, &self.mlp, s)
    }
}

/// Sign of the first nonzero coordinate (0 for the zero vector).
fn leading_sign(v: &[f64]) -> f64 {
    v.iter()
        .find(|&&c| c != 0.0)
        .map_or(0.0, |&c| c.signum())
}

/// Index values `s_i = beta' x_i`.
pub fn index(params: &ModelParams, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != params.p() {
        return Err(PlsiError::Shape(format!(
            "exposure matrix has {} columns but the index direction has {}",
            x.cols(),
            params.p()
        )));
    }
    Ok((0..x.rows()).map(|i| dot(x.row(i), &params.beta)).collect())
}

pub fn predict_eta(params: &ModelParams, x: &Matrix, z: &Matrix) -> Result<LinearPredictor> {
    if z.cols() != params.q() || z.rows() != x.rows() {
        return Err(PlsiError::Shape(format!(
            "covariate matrix is {}x{}, expected {}x{}",
            z.rows(),
            z.cols(),
            x.rows(),
            params.q()
        )));
    }
    let s = index(params, x)?;
    let g = params.link(&s)?;
    Ok(LinearPredictor(
        g.iter()
            .enumerate()
            .map(|(i, gi)| gi + dot(z.row(i), &params.gamma))
            .collect(),
    ))
}

/// Rescales to unit length and fixes the sign so the first nonzero
/// coordinate is positive. Returns whether the sign was flipped.
pub fn project_identifiable(beta: &[f64]) -> Result<(Vec<f64>, bool)> {
    let norm = norm2(beta);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(PlsiError::DegenerateDirection);
    }
    let flipped = leading_sign(beta) < 0.0;
    let scale = if flipped { -1.0 / norm } else { 1.0 / norm };
    Ok((beta.iter().map(|b| b * scale).collect(), flipped))
}

/// Inverse link: the conditional mean implied by `eta`.
pub fn apply_mean_link(family: Family, eta: &LinearPredictor) -> Result<Vec<f64>> {
    let eta = &eta.0;
    match family {
        Family::Gaussian => Ok(eta.clone()),
        Family::Binomial => Ok(eta.iter().map(|&e| sigmoid(e)).collect()),
        Family::Poisson => Ok(eta.iter().map(|e| e.exp()).collect()),
        Family::Cox => Err(PlsiError::UnsupportedForFamily {
            family: family.to_string(),
            what: "mean link (the partial likelihood has no mean response)".into(),
        }),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_link::Activation;
    use proptest::prelude::*;

    fn hand_model(beta: Vec<f64>, gamma: Vec<f64>) -> ModelParams {
        ModelParams {
            beta,
            gamma,
            theta: MlpParams {
                flat: vec![1.0, 0.0, 2.0, 0.0],
            },
            mlp: MlpSpec::new(vec![1], Activation::Tanh).unwrap(),
        }
    }

    fn zero_model(p: usize, gamma: Vec<f64>) -> ModelParams {
        let mlp = MlpSpec::new(vec![3], Activation::Tanh).unwrap();
        let mut beta = vec![0.0; p];
        beta[0] = 1.0;
        ModelParams {
            beta,
            gamma,
            theta: MlpParams::zeros(&mlp),
            mlp,
        }
    }

    #[test]
    fn basis_direction_picks_first_column() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = index(&zero_model(2, vec![]), &x).unwrap();
        assert_eq!(s, vec![1.0, 3.0]);
    }

    #[test]
    fn simulation_direction_on_ones() {
        let raw = [1.0, 0.7, -0.5, 0.5, 0.3, -0.1, 0.0, 0.0];
        let norm = 2.09f64.sqrt();
        let mut m = zero_model(8, vec![]);
        m.beta = raw.iter().map(|b| b / norm).collect();
        let s = index(&m, &Matrix::new(1, 8, vec![1.0; 8]).unwrap()).unwrap();
        assert!((s[0] - 1.314_257_5).abs() < 1e-6);
    }

    #[test]
    fn empty_rows_give_empty_index() {
        let s = index(&zero_model(3, vec![]), &Matrix::zeros(0, 3)).unwrap();
        assert!(s.is_empty());
        assert!(index(&zero_model(3, vec![]), &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_link_gives_linear_predictor() {
        let m = zero_model(2, vec![0.5, -1.0]);
        let x = Matrix::from_rows(&[vec![0.3, 0.1], vec![-2.0, 1.0]]).unwrap();
        let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, -1.0]]).unwrap();
        let eta = predict_eta(&m, &x, &z).unwrap();
        assert_eq!(eta.0, vec![0.5 - 2.0, 0.5 + 1.0]);
    }

    #[test]
    fn hand_net_composes() {
        let m = hand_model(vec![1.0, 0.0], vec![0.0]);
        let x = Matrix::from_rows(&[vec![0.5, 9.0]]).unwrap();
        let z = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let eta = predict_eta(&m, &x, &z).unwrap();
        assert!((eta.0[0] - 0.924_234_3).abs() < 1e-6);
    }

    #[test]
    fn intercept_shift_moves_every_prediction() {
        let mut m = hand_model(vec![1.0, 0.0], vec![0.2, 0.3]);
        let x = Matrix::from_rows(&[vec![0.5, 1.0], vec![-1.0, 0.0]]).unwrap();
        let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 5.0]]).unwrap();
        let before = predict_eta(&m, &x, &z).unwrap();
        m.gamma[0] += 1.5;
        let after = predict_eta(&m, &x, &z).unwrap();
        for (a, b) in after.0.iter().zip(&before.0) {
            assert!((a - b - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let (b, flipped) = project_identifiable(&[0.6, -0.8]).unwrap();
        assert!(!flipped);
        assert!((b[0] - 0.6).abs() < 1e-15 && (b[1] + 0.8).abs() < 1e-15);

        let (b, flipped) = project_identifiable(&[-3.0, 4.0]).unwrap();
        assert!(flipped);
        assert!((b[0] - 0.6).abs() < 1e-15 && (b[1] + 0.8).abs() < 1e-15);

        assert!(matches!(
            project_identifiable(&[0.0, 0.0]),
            Err(PlsiError::DegenerateDirection)
        ));
    }

    #[test]
    fn projection_tie_break_uses_first_nonzero() {
        let (b, flipped) = project_identifiable(&[0.0, -2.0, 1.0]).unwrap();
        assert!(flipped);
        assert!(b[0] == 0.0 && b[1] > 0.0);
    }

    #[test]
    fn mean_links() {
        let lp = |v: f64| LinearPredictor(vec![v]);
        assert_eq!(apply_mean_link(Family::Binomial, &lp(0.0)).unwrap(), vec![0.5]);
        let e = apply_mean_link(Family::Poisson, &lp(1.0)).unwrap()[0];
        assert!((e - 2.718_282).abs() < 1e-6);
        assert_eq!(apply_mean_link(Family::Gaussian, &lp(-4.2)).unwrap(), vec![-4.2]);
        assert!(matches!(
            apply_mean_link(Family::Cox, &lp(0.0)),
            Err(PlsiError::UnsupportedForFamily { .. })
        ));
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..10)) {
            prop_assume!(norm2(&v) > 1e-6);
            let (once, _) = project_identifiable(&v).unwrap();
            let (twice, flipped) = project_identifiable(&once).unwrap();
            prop_assert!(!flipped);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((norm2(&once) - 1.0).abs() < UNIT_NORM_TOL);
        }
    }
}
