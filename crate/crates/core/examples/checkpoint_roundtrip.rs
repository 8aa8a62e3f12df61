//! Save a fitted model to the binary checkpoint format and load it back.

use plsi::cli::checkpoint::{Checkpoint, CheckpointHeader};
use plsi::data::Family;
use plsi::model::predict_eta;
use plsi::simgen::{simulate, LinkShape, SimScenario};
use plsi::trainer::{fit, FitConfig};

fn main() -> plsi::error::Result<()> {
    let sim = simulate(&SimScenario::standard(LinkShape::Sigmoid, Family::Poisson, 600, 6))?;
    let data = &sim.dataset;
    let config = FitConfig {
        epochs: 60,
        ..FitConfig::for_family(Family::Poisson)
    };
    let model = fit(data, &config)?.params;

    let ckpt = Checkpoint {
        header: CheckpointHeader {
            family: Family::Poisson,
            mlp: model.mlp.clone(),
            p: model.p(),
            q: model.q(),
            models: 1,
            exposures: (1..=model.p()).map(|j| format!("x{j}")).collect(),
            covariates: (0..model.q()).map(|j| format!("z{j}")).collect(),
            intercept: false,
            standardization: None,
            fit_config: Some(config),
            index_range: None,
            alpha: None,
            replicate_ids: None,
        },
        models: vec![model],
    };
    let dir = std::env::temp_dir().join("plsi-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    ckpt.write(&path)?;
    let back = Checkpoint::read(&path)?;

    let before = predict_eta(&ckpt.models[0], &data.x, &data.z)?;
    let after = predict_eta(back.single()?, &data.x, &data.z)?;
    println!("{} bytes written to {}", std::fs::metadata(&path)?.len(), path.display());
    println!("predictions identical: {}", before == after);
    Ok(())
}
