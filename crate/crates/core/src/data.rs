use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PlsiError, Result};
use crate::numerics::Matrix;

/// Outcome family of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
    Cox,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
            Family::Cox => "cox",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = PlsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "continuous" => Ok(Family::Gaussian),
            "binomial" | "binary" => Ok(Family::Binomial),
            "poisson" | "count" => Ok(Family::Poisson),
            "cox" | "survival" => Ok(Family::Cox),
            other => Err(PlsiError::Argument(format!("unknown outcome family '{other}'"))),
        }
    }
}

/// Observed response, one variant per family.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Gaussian(Vec<f64>),
    Binomial(Vec<f64>),
    Poisson(Vec<f64>),
    Cox { time: Vec<f64>, event: Vec<bool> },
}

impl Outcome {
    pub fn family(&self) -> Family {
        match self {
            Outcome::Gaussian(_) => Family::Gaussian,
            Outcome::Binomial(_) => Family::Binomial,
            Outcome::Poisson(_) => Family::Poisson,
            Outcome::Cox { .. } => Family::Cox,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Outcome::Gaussian(y) | Outcome::Binomial(y) | Outcome::Poisson(y) => y.len(),
            Outcome::Cox { time, .. } => time.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Response values for the non-survival families.
    pub fn response(&self) -> Option<&[f64]> {
        match self {
            Outcome::Gaussian(y) | Outcome::Binomial(y) | Outcome::Poisson(y) => Some(y),
            Outcome::Cox { .. } => None,
        }
    }

    /// Checks values against the family's support.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, i: usize, v: f64| {
            Err(PlsiError::Domain(format!(
                "{} outcome must be {what}; row {} has value {v}",
                self.family(),
                i + 1
            )))
        };
        match self {
            Outcome::Gaussian(y) => {
                if let Some((i, &v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                    return bad("finite", i, v);
                }
            }
            Outcome::Binomial(y) => {
                if let Some((i, &v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
                    return bad("0 or 1", i, v);
                }
            }
            Outcome::Poisson(y) => {
                if let Some((i, &v)) = y
                    .iter()
                    .enumerate()
                    .find(|(_, &v)| !(v >= 0.0 && v.is_finite() && v.fract() == 0.0))
                {
                    return bad("a non-negative integer", i, v);
                }
            }
            Outcome::Cox { time, event } => {
                if time.len() != event.len() {
                    return Err(PlsiError::Shape(format!(
                        "{} survival times but {} event flags",
                        time.len(),
                        event.len()
                    )));
                }
                if let Some((i, &v)) = time
                    .iter()
                    .enumerate()
                    .find(|(_, &t)| !(t > 0.0 && t.is_finite()))
                {
                    return bad("a positive time", i, v);
                }
            }
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Outcome {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        match self {
            Outcome::Gaussian(y) => Outcome::Gaussian(pick(y)),
            Outcome::Binomial(y) => Outcome::Binomial(pick(y)),
            Outcome::Poisson(y) => Outcome::Poisson(pick(y)),
            Outcome::Cox { time, event } => Outcome::Cox {
                time: pick(time),
                event: idx.iter().map(|&i| event[i]).collect(),
            },
        }
    }
}

/// Exposures `x` (n x p), linear covariates `z` (n x q), and the outcome.
///
/// Optional per-observation weights scale each row's contribution to the
/// objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub z: Matrix,
    pub outcome: Outcome,
    pub weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Matrix, z: Matrix, outcome: Outcome) -> Result<Self> {
        let data = Dataset {
            x,
            z,
            outcome,
            weights: None,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.z.rows() != n || self.outcome.len() != n {
            return Err(PlsiError::Shape(format!(
                "exposures have {n} rows, covariates {}, outcome {}",
                self.z.rows(),
                self.outcome.len()
            )));
        }
        if !self.x.is_finite() || !self.z.is_finite() {
            return Err(PlsiError::Domain("exposures and covariates must be finite".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                return Err(PlsiError::Shape(format!("{} weights for {n} rows", w.len())));
            }
            if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(PlsiError::Domain("weights must be finite and non-negative".into()));
            }
        }
        self.outcome.validate()
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn q(&self) -> usize {
        self.z.cols()
    }

    pub fn family(&self) -> Family {
        self.outcome.family()
    }

    /// Rows listed in `idx`, repeats allowed (bootstrap resamples).
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            z: self.z.select_rows(idx),
            outcome: self.outcome.select(idx),
            weights: self
                .weights
                .as_ref()
                .map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_rejects_continuous_values() {
        let err = Outcome::Binomial(vec![0.0, 1.0, 0.4]).validate().unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn poisson_rejects_negative_and_fractional() {
        assert!(Outcome::Poisson(vec![0.0, 3.0]).validate().is_ok());
        assert!(Outcome::Poisson(vec![-1.0]).validate().is_err());
        assert!(Outcome::Poisson(vec![1.5]).validate().is_err());
    }

    #[test]
    fn cox_rejects_nonpositive_time() {
        let o = Outcome::Cox {
            time: vec![1.0, 0.0],
            event: vec![true, false],
        };
        assert!(o.validate().is_err());
    }

    #[test]
    fn dataset_shape_checked() {
        let x = Matrix::zeros(3, 2);
        let z = Matrix::zeros(2, 1);
        assert!(Dataset::new(x, z, Outcome::Gaussian(vec![0.0; 3])).is_err());
    }

    #[test]
    fn select_repeats_rows() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let z = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let d = Dataset::new(x, z, Outcome::Gaussian(vec![10.0, 20.0])).unwrap();
        let s = d.select(&[1, 1, 0]);
        assert_eq!(s.x.column(0), vec![2.0, 2.0, 1.0]);
        assert_eq!(s.outcome, Outcome::Gaussian(vec![20.0, 20.0, 10.0]));
    }
}
