//! Seeded synthetic series used by tests, examples and smoke runs.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use crate::data::SeriesTable;
use crate::error::Result;
use crate::tensor::{RngState, Tensor};

fn gaussian(n: usize, sigma: f64, rng: &mut RngState) -> Vec<f64> {
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n).map(|_| dist.sample(rng.inner())).collect()
}

pub fn sine(n: usize, period: f64, amplitude: f64) -> Vec<f64> {
    (0..n)
        .map(|t| amplitude * (2.0 * PI * t as f64 / period).sin())
        .collect()
}

/// `sin(2πt/24) + second · sin(2πt/12)`.
pub fn two_sine(n: usize, second: f64) -> Vec<f64> {
    sine(n, 24.0, 1.0)
        .into_iter()
        .zip(sine(n, 12.0, second))
        .map(|(a, b)| a + b)
        .collect()
}

/// `sin(2πt/24) + 0.5 sin(2πt/12)` plus Gaussian noise.
pub fn noisy_two_sine(n: usize, sigma: f64, rng: &mut RngState) -> Vec<f64> {
    two_sine(n, 0.5)
        .into_iter()
        .zip(gaussian(n, sigma, rng))
        .map(|(a, b)| a + b)
        .collect()
}

pub fn white_noise(n: usize, channels: usize, rng: &mut RngState) -> Tensor {
    Tensor::new(&[n, channels], gaussian(n * channels, 1.0, rng)).expect("shape")
}

/// Unit sine whose period is `first` on the first half of every `block`
/// rows and `second` on the other half. Phase is continuous across switches.
pub fn piecewise_period(n: usize, block: usize, first: f64, second: f64) -> Vec<f64> {
    let half = (block / 2).max(1);
    let mut phase = 0.0f64;
    (0..n)
        .map(|t| {
            let v = phase.sin();
            let p = if (t % block.max(1)) < half { first } else { second };
            phase += 2.0 * PI / p;
            v
        })
        .collect()
}

/// Noisy `sin(2πt/24) + 0.5 sin(2πt/12)` with noise `σ = 0.1`.
pub fn periodic_fixture(n: usize, seed: u64) -> SeriesTable {
    let col = noisy_two_sine(n, 0.1, &mut RngState::new(seed));
    table(&[col]).expect("one column")
}

/// Sine alternating between period 16 and period 48 every 96 rows, plus
/// noise `σ = 0.1`.
pub fn switching_fixture(n: usize, seed: u64) -> SeriesTable {
    let noise = gaussian(n, 0.1, &mut RngState::new(seed));
    let col = piecewise_period(n, 192, 16.0, 48.0)
        .into_iter()
        .zip(noise)
        .map(|(a, b)| a + b)
        .collect();
    table(&[col]).expect("one column")
}

/// Stacks per-channel columns into a table named `ch0, ch1, ...`.
pub fn table(columns: &[Vec<f64>]) -> Result<SeriesTable> {
    let n = columns.first().map_or(0, Vec::len);
    let c = columns.len();
    let mut data = vec![0.0; n * c];
    for (j, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            data[t * c + j] = *v;
        }
    }
    Ok(SeriesTable {
        timestamps: None,
        values: Tensor::new(&[n, c], data)?,
        channel_names: (0..c).map(|j| format!("ch{j}")).collect(),
    })
}

/// Renders a table as CSV with a `date` column of row indices.
pub fn to_csv(table: &SeriesTable) -> String {
    let mut out = String::from("date");
    for name in &table.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let c = table.channels();
    for (t, row) in table.values.data().chunks(c).enumerate() {
        match &table.timestamps {
            Some(ts) => out.push_str(&ts[t]),
            None => out.push_str(&t.to_string()),
        }
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
