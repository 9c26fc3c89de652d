//! Fused, Fourier-only and wavelet-only variants on a stationary periodic
//! series and on a series whose period switches between 16 and 48.

use wftnet::data::SplitSpec;
use wftnet::model::ModelConfig;
use wftnet::synthetic;
use wftnet::train::{run_experiment, TrainConfig};
use wftnet::wftblock::BranchMode;

fn main() -> wftnet::Result<()> {
    let fixtures = [
        ("periodic", synthetic::periodic_fixture(1200, 11)),
        ("switching", synthetic::switching_fixture(1200, 12)),
    ];
    let tc = TrainConfig {
        lr: 3e-3,
        epochs: 10,
        max_windows_per_epoch: Some(128),
        seed: 1,
        ..TrainConfig::default()
    };
    println!("{:<10} {:>10} {:>13} {:>13}", "fixture", "fused", "fourier-only", "wavelet-only");
    for (name, table) in &fixtures {
        let mut row = Vec::new();
        for mode in [BranchMode::Fused, BranchMode::FourierOnly, BranchMode::WaveletOnly] {
            let cfg = ModelConfig {
                d_model: 8,
                layers: 1,
                top_k: 2,
                mode,
                ..ModelConfig::new(48, 24, 1)
            };
            row.push(run_experiment(table, cfg, &tc, &SplitSpec::default())?.test.mse);
        }
        println!("{name:<10} {:>10.4} {:>13.4} {:>13.4}", row[0], row[1], row[2]);
    }
    Ok(())
}
