//! Logistic single-index fit on simulated binary outcomes.

use plsi::data::Family;
use plsi::model::{apply_mean_link, predict_eta};
use plsi::simgen::{simulate, LinkShape, SimScenario};
use plsi::trainer::{fit, FitConfig};

fn main() -> plsi::error::Result<()> {
    let scenario = SimScenario::standard(LinkShape::SShape, Family::Binomial, 2000, 4);
    let sim = simulate(&scenario)?;
    let data = &sim.dataset;
    let m = fit(data, &FitConfig::for_family(Family::Binomial))?.params;

    let eta = predict_eta(&m, &data.x, &data.z)?;
    let prob = apply_mean_link(Family::Binomial, &eta)?;
    let y = data.outcome.response().expect("binary outcome");
    let accuracy = prob
        .iter()
        .zip(y)
        .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
        .count() as f64
        / y.len() as f64;

    println!("beta_hat  = {:?}", rounded(&m.beta));
    println!("beta_true = {:?}", rounded(&scenario.beta_true));
    println!("in-sample accuracy {accuracy:.3}");
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
