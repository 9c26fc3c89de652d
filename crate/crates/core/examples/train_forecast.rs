//! Train on a noisy periodic series, compare with persistence, save and
//! reload the checkpoint, then forecast past the end of the data.

use wftnet::checkpoint::{load_checkpoint, save_checkpoint};
use wftnet::data::SplitSpec;
use wftnet::model::ModelConfig;
use wftnet::synthetic;
use wftnet::train::{run_experiment, TrainConfig};

fn main() -> wftnet::Result<()> {
    let table = synthetic::periodic_fixture(1200, 11);
    let cfg = ModelConfig {
        d_model: 8,
        layers: 1,
        top_k: 2,
        ..ModelConfig::new(48, 24, 1)
    };
    let tc = TrainConfig {
        lr: 3e-3,
        epochs: 10,
        max_windows_per_epoch: Some(128),
        seed: 1,
        ..TrainConfig::default()
    };
    let exp = run_experiment(&table, cfg, &tc, &SplitSpec::default())?;

    println!("epoch  train_mse  val_mse  alpha");
    for r in &exp.outcome.log {
        println!(
            "{:>5}  {:>9.4}  {:>7.4}  {:.3}",
            r.epoch, r.train_mse, r.val_mse, r.alpha_mean
        );
    }
    println!(
        "test mse {:.4} (persistence {:.4}), best epoch {}",
        exp.test.mse, exp.persistence_mse, exp.outcome.best_epoch
    );

    let dir = std::env::temp_dir().join("wftnet-example");
    std::fs::create_dir_all(&dir).map_err(|e| wftnet::WftError::Format(e.to_string()))?;
    let path = dir.join("checkpoint.wft");
    save_checkpoint(&exp.outcome.model, Some(&exp.stats), &path)?;
    let ck = load_checkpoint(&path)?;
    let stats = ck.standardization.expect("saved with statistics");

    let n = table.rows();
    let history = stats.apply(&table.values.rows(n - 48, n)?);
    let forecast = stats.invert(&ck.model.predict(&history)?);
    println!("next 24 values:");
    for (i, v) in forecast.data().iter().enumerate() {
        println!("  t+{:<2} {v:>8.4}", i + 1);
    }
    Ok(())
}
