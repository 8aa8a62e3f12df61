//! Neural partial-linear single-index models.
//!
//! The linear predictor is `eta = g(beta' x) + gamma' z`, where `g` is a small
//! multilayer perceptron, `beta` is a unit vector with a non-negative first
//! coordinate, and `z` enters linearly. Gaussian, binomial, Poisson and Cox
//! outcomes are supported.
//!
//! ```no_run
//! use plsi::data::Family;
//! use plsi::inference::{bootstrap, BootstrapConfig};
//! use plsi::simgen::{simulate, LinkShape, SimScenario};
//! use plsi::trainer::{fit, FitConfig};
//!
//! let sim = simulate(&SimScenario::standard(LinkShape::Sigmoid, Family::Gaussian, 1000, 1))?;
//! let config = FitConfig::for_family(Family::Gaussian);
//! let model = fit(&sim.dataset, &config)?.params;
//! println!("beta = {:?}", model.beta);
//!
//! let boot = bootstrap(&sim.dataset, &config, &BootstrapConfig { replicates: 50, ..Default::default() })?;
//! println!("se = {:?}", boot.se());
//! # Ok::<(), plsi::error::PlsiError>(())
//! ```
//!
//! Modules:
//! - [`numerics`]: dense matrices, seeded random streams, quantiles.
//! - [`neural_link`]: the scalar-input MLP and its backward pass.
//! - [`model`], [`objectives`]: the predictor and the per-family losses.
//! - [`trainer`]: Adam with the sign rule and unit-norm projection on `beta`.
//! - [`inference`]: nonparametric bootstrap, intervals, link bands.
//! - [`simgen`], [`mcstudy`]: simulated designs and Monte-Carlo cells.
//! - [`cli`]: the `plsi` command-line tool.

pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod mcstudy;
pub mod model;
pub mod neural_link;
pub mod numerics;
pub mod objectives;
pub mod simgen;
pub mod trainer;

pub use data::{Dataset, Family, Outcome};
pub use error::{PlsiError, Result};
pub use model::ModelParams;
pub use trainer::{fit, FitConfig, FitResult};
