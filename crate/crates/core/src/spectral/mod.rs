//! Fourier and wavelet analysis: spectra, dominant periods, the
//! periodicity-weighted coefficient and the Morlet scalogram.

mod fourier;
mod period;
mod wavelet;

pub use fourier::{
    amplitude_spectrum, dft, dft_bin, fft, AmplitudeSpectrum, ComplexPair, ComplexSpectrum,
};
pub use period::{
    pwc, pwc_report, topk_periods, PeriodEntry, PeriodSet, PwcReport, MIN_CHANNEL_ENERGY,
};
pub use wavelet::{
    cwt, cwt_fft, default_scales, morlet, CwtPlan, ScaleSet, Scalogram, DEFAULT_OMEGA0,
    SUPPORT_SIGMAS,
};
