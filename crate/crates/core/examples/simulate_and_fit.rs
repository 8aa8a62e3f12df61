//! Simulate a Gaussian dataset with a sigmoid link and fit the model.
//!
//! cargo run --example simulate_and_fit

use plsi::data::Family;
use plsi::simgen::{eval_true_link, simulate, LinkShape, SimScenario};
use plsi::trainer::{fit, FitConfig};

fn main() -> plsi::error::Result<()> {
    let scenario = SimScenario::standard(LinkShape::Sigmoid, Family::Gaussian, 1000, 1);
    let sim = simulate(&scenario)?;
    let result = fit(&sim.dataset, &FitConfig::for_family(Family::Gaussian))?;
    let m = &result.params;

    println!("stopped after {} epochs (best {})", result.stopped_epoch, result.best_epoch);
    println!("{:>8} {:>9} {:>9}", "", "truth", "estimate");
    for (j, (t, b)) in scenario.beta_true.iter().zip(&m.beta).enumerate() {
        println!("{:>8} {t:>9.4} {b:>9.4}", format!("beta{}", j + 1));
    }
    for (j, (t, g)) in scenario.gamma_true.iter().zip(&m.gamma).enumerate() {
        println!("{:>8} {t:>9.4} {g:>9.4}", format!("gamma{j}"));
    }

    // The link is only identified up to a shift, which the intercept absorbs.
    let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let g_hat = m.link(&grid)?;
    println!("\n{:>6} {:>9} {:>9}", "s", "g(s)", "g_hat(s)");
    for (s, g) in grid.iter().zip(&g_hat) {
        println!("{s:>6.1} {:>9.4} {g:>9.4}", eval_true_link(LinkShape::Sigmoid, *s));
    }
    Ok(())
}
