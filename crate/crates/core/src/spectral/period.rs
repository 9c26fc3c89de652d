use crate::error::{Result, WftError};
use crate::tensor::Tensor;

use super::fourier::{fft, AmplitudeSpectrum};

/// Per-channel spectral energy below this is treated as an empty channel.
pub const MIN_CHANNEL_ENERGY: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodEntry {
    pub freq_index: usize,
    pub period: usize,
    pub amplitude: f64,
}

/// Dominant periods in descending amplitude order.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodSet {
    pub entries: Vec<PeriodEntry>,
    /// Set when fewer than `k` distinct periods exist or the spectrum is
    /// identically zero.
    pub warning: bool,
}

impl PeriodSet {
    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }

    pub fn freq_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.freq_index).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.amplitude).collect()
    }
}

/// Selects the `k` strongest non-DC, sub-Nyquist bins and converts each to the
/// integer period `ceil(t_e / index)`.
///
/// Equal amplitudes prefer the lower index. When two bins map to the same
/// period only the stronger one is kept and selection continues down the
/// ranking.
pub fn topk_periods(amps: &AmplitudeSpectrum, k: usize, t_e: usize) -> Result<PeriodSet> {
    let nyquist = t_e / 2;
    if k == 0 || k > nyquist {
        return Err(WftError::config(format!(
            "top-k needs 1 <= k <= {nyquist} for length {t_e}, got k = {k}"
        )));
    }
    if amps.len() < nyquist + 1 {
        return Err(WftError::dim(format!(
            "amplitude spectrum of length {} is too short for T_e = {t_e}",
            amps.len()
        )));
    }
    let mut candidates: Vec<usize> = (1..=nyquist).collect();
    // stable sort keeps ascending index order among equal amplitudes
    candidates.sort_by(|&a, &b| amps.amps[b].total_cmp(&amps.amps[a]));

    let mut entries: Vec<PeriodEntry> = Vec::with_capacity(k);
    for idx in candidates {
        if entries.len() == k {
            break;
        }
        let period = t_e.div_ceil(idx);
        if entries.iter().any(|e| e.period == period) {
            continue;
        }
        entries.push(PeriodEntry {
            freq_index: idx,
            period,
            amplitude: amps.amps[idx],
        });
    }
    let silent = amps.amps[1..=nyquist].iter().all(|&a| a <= MIN_CHANNEL_ENERGY);
    let warning = entries.len() < k || silent;
    Ok(PeriodSet { entries, warning })
}

/// Breakdown of the periodicity-weighted coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct PwcReport {
    pub alpha: f64,
    pub channel_ratios: Vec<f64>,
    /// Channels whose energy in bins `1..=m` fell below [`MIN_CHANNEL_ENERGY`].
    pub degenerate_channels: Vec<usize>,
}

/// Periodicity-weighted coefficient of `[T, C]` data over bins `1..=m`.
pub fn pwc(x: &Tensor, m: usize) -> Result<f64> {
    pwc_report(x, m).map(|r| r.alpha)
}

/// Mean over channels of `max(a_i^2) / sum(a_i^2)` for `1 <= i <= m`.
pub fn pwc_report(x: &Tensor, m: usize) -> Result<PwcReport> {
    if x.rank() != 2 {
        return Err(WftError::dim(format!(
            "pwc expects [T, C], got {:?}",
            x.shape()
        )));
    }
    let (len, channels) = (x.shape()[0], x.shape()[1]);
    if m < 2 || m > len / 2 {
        return Err(WftError::config(format!(
            "pwc needs 2 <= m <= {} for T = {len}, got m = {m}",
            len / 2
        )));
    }
    let mut channel_ratios = Vec::with_capacity(channels);
    let mut degenerate_channels = Vec::new();
    for ch in 0..channels {
        let spec = fft(&x.column(ch))?;
        let energies: Vec<f64> = spec.coeffs[1..=m].iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = energies.iter().sum();
        if total < MIN_CHANNEL_ENERGY {
            degenerate_channels.push(ch);
            channel_ratios.push(1.0 / m as f64);
            continue;
        }
        let peak = energies.iter().copied().fold(0.0, f64::max);
        channel_ratios.push(peak / total);
    }
    let alpha = channel_ratios.iter().sum::<f64>() / channels as f64;
    Ok(PwcReport {
        alpha,
        channel_ratios,
        degenerate_channels,
    })
}
