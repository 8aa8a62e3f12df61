//! Pointwise bootstrap band for the link function, compared with the truth.

use plsi::data::Family;
use plsi::inference::{bootstrap, curve_band, linspace, BootstrapConfig};
use plsi::simgen::{eval_true_link, simulate, LinkShape, SimScenario};
use plsi::trainer::FitConfig;

fn main() -> plsi::error::Result<()> {
    let link = LinkShape::SShape;
    let sim = simulate(&SimScenario::standard(link, Family::Gaussian, 1000, 5))?;
    let boot = BootstrapConfig {
        replicates: 25,
        seed: 2,
        ..BootstrapConfig::default()
    };
    let result = bootstrap(&sim.dataset, &FitConfig::for_family(Family::Gaussian), &boot)?;

    // The default band spans the central 99% of fitted index values; here a coarse custom grid.
    let grid = linspace(-2.0, 2.0, 9);
    let band = curve_band(&result.replicate_models, &grid, 0.1)?;
    let g_hat = result.point_model.link(&grid)?;
    println!("{:>6} {:>8} {:>8} {:>8} {:>8}", "s", "true", "fit", "lo", "hi");
    for k in 0..grid.len() {
        println!(
            "{:>6.2} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            grid[k],
            eval_true_link(link, grid[k]),
            g_hat[k],
            band.lo[k],
            band.hi[k]
        );
    }
    Ok(())
}
