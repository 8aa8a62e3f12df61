//! Cox partial-likelihood fit on censored survival times.

use plsi::data::{Family, Outcome};
use plsi::simgen::{simulate, LinkShape, SimScenario};
use plsi::trainer::{fit, FitConfig};

fn main() -> plsi::error::Result<()> {
    let scenario = SimScenario::standard(LinkShape::Linear, Family::Cox, 2000, 8);
    let sim = simulate(&scenario)?;
    if let Outcome::Cox { event, .. } = &sim.dataset.outcome {
        let censored = event.iter().filter(|e| !**e).count();
        println!("{censored} of {} observations censored", event.len());
    }

    // Full-batch Cox training uses a larger step than the other families.
    let config = FitConfig::for_family(Family::Cox);
    let result = fit(&sim.dataset, &config)?;
    let m = &result.params;
    println!("lr {} over {} epochs", config.learning_rate, result.stopped_epoch);
    for (j, (t, b)) in scenario.beta_true.iter().zip(&m.beta).enumerate() {
        println!("beta{:<2} truth {t:>7.4} estimate {b:>7.4}", j + 1);
    }
    // No baseline hazard level: gamma[0] is not identified under Cox.
    for (j, (t, g)) in scenario.gamma_true.iter().zip(&m.gamma).enumerate().skip(1) {
        println!("gamma{j:<1} truth {t:>7.4} estimate {g:>7.4}");
    }
    Ok(())
}
