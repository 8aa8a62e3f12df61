//! Bootstrap standard errors against closed-form OLS standard errors.

use nalgebra::{DMatrix, DVector};

use plsi::data::Family;
use plsi::inference::{bootstrap, BootstrapConfig};
use plsi::neural_link::{Activation, MlpSpec};
use plsi::simgen::{simulate, LinkShape, SimScenario};
use plsi::trainer::FitConfig;

#[test]
fn covariate_se_matches_ols_on_linear_data() {
    let sim = simulate(&SimScenario::standard(LinkShape::Linear, Family::Gaussian, 500, 12)).unwrap();
    let data = &sim.dataset;
    let config = FitConfig {
        mlp: MlpSpec::new(vec![8], Activation::Tanh).unwrap(),
        seed: 4,
        ..FitConfig::for_family(Family::Gaussian)
    };
    let boot = BootstrapConfig {
        replicates: 60,
        seed: 5,
        ..BootstrapConfig::default()
    };
    let result = bootstrap(data, &config, &boot).unwrap();

    let (n, p, q) = (data.n(), data.p(), data.q());
    let a = DMatrix::from_fn(n, p + q, |i, j| if j < p { data.x.get(i, j) } else { data.z.get(i, j - p) });
    let y = DVector::from_column_slice(data.outcome.response().unwrap());
    let inv = (a.transpose() * &a).try_inverse().unwrap();
    let resid = &y - &a * (&inv * a.transpose() * &y);
    let sigma2 = resid.norm_squared() / (n - p - q) as f64;

    // Covariates other than the intercept enter linearly in both models.
    for j in 1..q {
        let ols_se = (sigma2 * inv[(p + j, p + j)]).sqrt();
        let boot_se = result.se()[p + j];
        let ratio = boot_se / ols_se;
        assert!((0.7..=1.3).contains(&ratio), "gamma{j}: bootstrap {boot_se:.4} vs OLS {ols_se:.4}");
    }
}
