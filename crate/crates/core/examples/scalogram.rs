//! Morlet scalogram of a signal whose period jumps from 16 to 48.
//!
//! Prints the dominant scale over time and writes `tau,scale,modulus` rows
//! to the path given as the first argument (default `scalogram.csv`).

use wftnet::checkpoint::write_atomic;
use wftnet::spectral::{cwt, default_scales, DEFAULT_OMEGA0};
use wftnet::synthetic;

fn main() -> wftnet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "scalogram.csv".into());
    let len = 192;
    let x = synthetic::piecewise_period(len, len, 16.0, 48.0);
    let scales = default_scales(len, DEFAULT_OMEGA0)?;
    let sg = cwt(&x, &scales)?;

    println!("tau  dominant scale  implied period");
    for tau in (0..len).step_by(16) {
        let best = (0..sg.n_scales())
            .max_by(|&a, &b| sg.get(tau, a).norm().total_cmp(&sg.get(tau, b).norm()))
            .unwrap_or(0);
        let s = scales.scales()[best];
        let period = 4.0 * std::f64::consts::PI * s
            / (DEFAULT_OMEGA0 + (DEFAULT_OMEGA0 * DEFAULT_OMEGA0 + 2.0).sqrt());
        println!("{tau:>3}  {s:>14.2}  {period:>14.1}");
    }

    let mut csv = String::from("tau,scale,modulus\n");
    for tau in 0..len {
        for (j, s) in scales.scales().iter().enumerate() {
            csv.push_str(&format!("{tau},{s},{}\n", sg.get(tau, j).norm()));
        }
    }
    write_atomic(out.as_ref(), csv.as_bytes())?;
    println!("wrote {out}");
    Ok(())
}
