//! Dominant periods and the periodicity weight of a few synthetic signals.

use wftnet::spectral::{amplitude_spectrum, pwc_report, topk_periods};
use wftnet::{synthetic, RngState, Tensor};

fn describe(name: &str, x: Vec<f64>) -> wftnet::Result<()> {
    let len = x.len();
    let t = Tensor::new(&[len, 1], x)?;
    let spec = amplitude_spectrum(&t)?;
    let top = topk_periods(&spec, 3, len)?;
    let alpha = pwc_report(&t, 32)?;
    println!("{name}");
    for e in &top.entries {
        println!(
            "  bin {:>3}  period {:>3}  amplitude {:>9.3}",
            e.freq_index, e.period, e.amplitude
        );
    }
    if top.warning {
        println!("  (fewer distinct periods than requested or a flat spectrum)");
    }
    println!("  alpha = {:.4}", alpha.alpha);
    Ok(())
}

fn main() -> wftnet::Result<()> {
    let len = 192;
    describe("sine, period 24", synthetic::sine(len, 24.0, 1.0))?;
    describe("two sines, 24 and 12 (1 : 0.5)", synthetic::two_sine(len, 0.5))?;
    describe(
        "two sines plus noise",
        synthetic::noisy_two_sine(len, 0.1, &mut RngState::new(3)),
    )?;
    describe(
        "white noise",
        synthetic::white_noise(len, 1, &mut RngState::new(4)).column(0),
    )?;
    describe("silence", vec![0.0; len])?;
    Ok(())
}
