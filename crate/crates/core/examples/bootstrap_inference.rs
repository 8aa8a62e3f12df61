//! Nonparametric bootstrap standard errors and intervals.
//!
//! cargo run --release --example bootstrap_inference

use plsi::data::Family;
use plsi::inference::{bootstrap, BootstrapConfig};
use plsi::simgen::{simulate, LinkShape, SimScenario};
use plsi::trainer::FitConfig;

fn main() -> plsi::error::Result<()> {
    let sim = simulate(&SimScenario::standard(LinkShape::Linear, Family::Gaussian, 500, 3))?;
    let boot = BootstrapConfig {
        replicates: 30,
        seed: 17,
        ..BootstrapConfig::default()
    };
    let result = bootstrap(&sim.dataset, &FitConfig::for_family(Family::Gaussian), &boot)?;

    println!(
        "{} of {} replicates kept ({} retried)",
        result.replicate_ids.len(),
        result.requested,
        result.retried
    );
    println!("{:<8} {:>9} {:>8} {:>20} {:>20}", "", "estimate", "se", "normal CI", "percentile CI");
    let s = &result.summary;
    for (k, name) in result.names.iter().enumerate() {
        let (nl, nh) = s.ci_normal[k];
        let (pl, ph) = s.ci_percentile[k];
        println!(
            "{name:<8} {:>9.4} {:>8.4} [{nl:>8.4},{nh:>8.4}] [{pl:>8.4},{ph:>8.4}]",
            result.point[k], s.se[k]
        );
    }
    Ok(())
}
