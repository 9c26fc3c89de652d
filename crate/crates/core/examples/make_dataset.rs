//! Writes a two-channel synthetic CSV and a matching run configuration for
//! the `wftnet` binary into the directory given as the first argument.
//!
//! ```text
//! cargo run --example make_dataset -- demo
//! cargo run --bin wftnet -- train    --config demo/run.json
//! cargo run --bin wftnet -- evaluate --config demo/run.json
//! cargo run --bin wftnet -- forecast --config demo/run.json --at 900
//! cargo run --bin wftnet -- analyze  --config demo/run.json
//! ```

use std::path::PathBuf;

use wftnet::checkpoint::write_atomic;
use wftnet::synthetic;
use wftnet::RngState;

const CONFIG: &str = r#"{
  "data": "series.csv",
  "out": "run",
  "seq_len": 48,
  "pred_len": 24,
  "d_model": 8,
  "layers": 1,
  "top_k": 2,
  "lr": 0.003,
  "epochs": 8,
  "max_windows_per_epoch": 128,
  "seed": 1
}
"#;

fn main() -> wftnet::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    std::fs::create_dir_all(&dir).map_err(|e| wftnet::WftError::Format(e.to_string()))?;
    let n = 1000;
    let a = synthetic::noisy_two_sine(n, 0.1, &mut RngState::new(1));
    let b = synthetic::piecewise_period(n, 192, 16.0, 48.0);
    let table = synthetic::table(&[a, b])?;
    write_atomic(&dir.join("series.csv"), synthetic::to_csv(&table).as_bytes())?;
    write_atomic(&dir.join("run.json"), CONFIG.as_bytes())?;
    println!("wrote {0}/series.csv and {0}/run.json", dir.display());
    Ok(())
}
