//! Compare the analytic objective gradient with central finite differences.

use plsi::data::{Dataset, Family, Outcome};
use plsi::model::ModelParams;
use plsi::neural_link::{he_init, Activation, MlpSpec};
use plsi::numerics::{Matrix, Rng};
use plsi::trainer::{objective_and_gradient, FitConfig};

fn main() -> plsi::error::Result<()> {
    let mut rng = Rng::new(3);
    let (n, p, q) = (12, 3, 2);
    let x = Matrix::new(n, p, (0..n * p).map(|_| rng.normal()).collect())?;
    let z = Matrix::new(n, q, (0..n * q).map(|_| rng.normal()).collect())?;
    let time = (0..n).map(|_| (1 + rng.below(4)) as f64).collect();
    let event = (0..n).map(|i| i % 3 != 0).collect();
    let data = Dataset::new(x, z, Outcome::Cox { time, event })?;

    let mlp = MlpSpec::new(vec![4, 3], Activation::Tanh)?;
    let params = ModelParams {
        beta: vec![0.6, 0.0, 0.8],
        gamma: vec![0.2, -0.4],
        theta: he_init(&mut rng, &mlp),
        mlp: mlp.clone(),
    };
    let config = FitConfig {
        family: Family::Cox,
        mlp,
        anchoring_weight: 1.0,
        ..FitConfig::default()
    };
    let g = objective_and_gradient(&params, &data, &config)?;

    let h = 1e-5;
    let value = |m: &ModelParams| objective_and_gradient(m, &data, &config).map(|o| o.value);
    println!("{:<8} {:>12} {:>12}", "coord", "analytic", "numeric");
    for j in 0..p {
        let (mut up, mut down) = (params.clone(), params.clone());
        up.beta[j] += h;
        down.beta[j] -= h;
        let fd = (value(&up)? - value(&down)?) / (2.0 * h);
        println!("{:<8} {:>12.8} {fd:>12.8}", format!("beta{}", j + 1), g.beta[j]);
    }
    for k in 0..4 {
        let (mut up, mut down) = (params.clone(), params.clone());
        up.theta.flat[k] += h;
        down.theta.flat[k] -= h;
        let fd = (value(&up)? - value(&down)?) / (2.0 * h);
        println!("{:<8} {:>12.8} {fd:>12.8}", format!("theta{k}"), g.theta[k]);
    }
    Ok(())
}
