//! Morlet continuous wavelet transform on a unit-spaced grid.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Result, WftError};

use super::fourier::{fft_in_place, ComplexPair};

/// Default Morlet central frequency.
pub const DEFAULT_OMEGA0: f64 = 6.0;

/// Wavelet support is cut where `|t - tau| / s` exceeds this many
/// standard deviations of the Gaussian envelope.
pub const SUPPORT_SIGMAS: f64 = 4.0;

const SMALLEST_SCALE: f64 = 2.0;
const OCTAVE_FRACTION: f64 = 0.5;

/// `pi^{-1/4} exp(j omega0 t) exp(-t^2 / 2)`.
pub fn morlet(t: f64, omega0: f64) -> ComplexPair {
    let envelope = PI.powf(-0.25) * (-0.5 * t * t).exp();
    Complex64::from_polar(envelope, omega0 * t)
}

/// Ascending wavelet scales together with the Morlet central frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSet {
    scales: Vec<f64>,
    omega0: f64,
}

impl ScaleSet {
    pub fn new(scales: Vec<f64>, omega0: f64) -> Result<Self> {
        if scales.len() < 2 {
            return Err(WftError::config("a scale set needs at least two scales"));
        }
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(WftError::config(format!(
                "omega0 must be positive, got {omega0}"
            )));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(WftError::config("scales must be positive and finite"));
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WftError::config("scales must be strictly ascending"));
        }
        Ok(Self { scales, omega0 })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

/// Half-octave ladder `2 * 2^(j/2)` with the largest scale at most `len / 2`.
pub fn default_scales(len: usize, omega0: f64) -> Result<ScaleSet> {
    if len < 8 {
        return Err(WftError::config(format!(
            "default scales need a sequence of at least 8 samples, got {len}"
        )));
    }
    let count = ((len as f64 / 4.0).log2() / OCTAVE_FRACTION).floor() as usize + 1;
    let scales = (0..count)
        .map(|j| SMALLEST_SCALE * 2f64.powf(j as f64 * OCTAVE_FRACTION))
        .collect();
    ScaleSet::new(scales, omega0)
}

/// Complex wavelet coefficients laid out `[tau][scale]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scalogram {
    values: Vec<ComplexPair>,
    len: usize,
    n_scales: usize,
}

impl Scalogram {
    pub fn get(&self, tau: usize, scale: usize) -> ComplexPair {
        self.values[tau * self.n_scales + scale]
    }

    pub fn values(&self) -> &[ComplexPair] {
        &self.values
    }

    /// Number of time positions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    /// Mean modulus over time for each scale.
    pub fn mean_modulus_per_scale(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_scales];
        for row in self.values.chunks(self.n_scales) {
            for (a, c) in acc.iter_mut().zip(row) {
                *a += c.norm();
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.len as f64);
        acc
    }
}

/// Truncated, conjugated, scale-normalised Morlet kernels for a fixed
/// sequence length. Kernel `j` stores `s^{-1/2} conj(psi(u / s))` for
/// offsets `u = -half..=half`.
#[derive(Clone, Debug)]
pub struct CwtPlan {
    len: usize,
    scales: ScaleSet,
    kernels: Vec<Vec<Complex64>>,
}

impl CwtPlan {
    pub fn new(len: usize, scales: &ScaleSet) -> Result<Self> {
        if len < 2 {
            return Err(WftError::dim(format!(
                "wavelet transform needs at least 2 samples, got {len}"
            )));
        }
        let kernels = scales
            .scales()
            .iter()
            .map(|&s| {
                let half = ((SUPPORT_SIGMAS * s).floor() as usize).min(len - 1);
                let norm = 1.0 / s.sqrt();
                (0..=2 * half)
                    .map(|i| {
                        let u = i as f64 - half as f64;
                        morlet(u / s, scales.omega0()).conj() * norm
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            len,
            scales: scales.clone(),
            kernels,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn scales(&self) -> &[f64] {
        self.scales.scales()
    }

    /// Direct summation, output laid out `[tau][scale]`.
    pub fn transform(&self, x: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.len);
        let n_scales = self.kernels.len();
        let mut out = vec![Complex64::new(0.0, 0.0); self.len * n_scales];
        for (j, kernel) in self.kernels.iter().enumerate() {
            let half = (kernel.len() - 1) / 2;
            for tau in 0..self.len {
                let t0 = tau.saturating_sub(half);
                let t1 = (tau + half + 1).min(self.len);
                let mut acc = Complex64::new(0.0, 0.0);
                for t in t0..t1 {
                    acc += kernel[t + half - tau] * x[t];
                }
                out[tau * n_scales + j] = acc;
            }
        }
        out
    }

    /// Adjoint of [`transform`](Self::transform) as a real-linear map:
    /// `g[t] = sum_{tau, j} Re(conj(w[tau, j]) * k_j(t - tau))`.
    pub fn adjoint(&self, w: &[Complex64]) -> Vec<f64> {
        let n_scales = self.kernels.len();
        debug_assert_eq!(w.len(), self.len * n_scales);
        let mut g = vec![0.0; self.len];
        for (j, kernel) in self.kernels.iter().enumerate() {
            let half = (kernel.len() - 1) / 2;
            for tau in 0..self.len {
                let wv = w[tau * n_scales + j];
                if wv.re == 0.0 && wv.im == 0.0 {
                    continue;
                }
                let t0 = tau.saturating_sub(half);
                let t1 = (tau + half + 1).min(self.len);
                for (gt, k) in g[t0..t1].iter_mut().zip(&kernel[t0 + half - tau..]) {
                    *gt += wv.re * k.re + wv.im * k.im;
                }
            }
        }
        g
    }

    /// Same result as [`transform`](Self::transform) via zero-padded FFT
    /// convolution, one scale at a time.
    pub fn transform_fft(&self, x: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.len);
        let n_scales = self.kernels.len();
        let mut out = vec![Complex64::new(0.0, 0.0); self.len * n_scales];
        for (j, kernel) in self.kernels.iter().enumerate() {
            let half = (kernel.len() - 1) / 2;
            // circular wrap must not fold the kernel tail onto 0..len
            let n = (self.len + half + 1).next_power_of_two();
            let mut xs = vec![Complex64::new(0.0, 0.0); n];
            for (d, &v) in xs.iter_mut().zip(x) {
                d.re = v;
            }
            // h[m] = k(-m), indices taken modulo n
            let mut hs = vec![Complex64::new(0.0, 0.0); n];
            for (i, k) in kernel.iter().enumerate() {
                let u = i as isize - half as isize;
                hs[(-u).rem_euclid(n as isize) as usize] = *k;
            }
            fft_in_place(&mut xs, false);
            fft_in_place(&mut hs, false);
            xs.iter_mut().zip(&hs).for_each(|(a, b)| *a *= b);
            fft_in_place(&mut xs, true);
            for tau in 0..self.len {
                out[tau * n_scales + j] = xs[tau];
            }
        }
        out
    }
}

/// Morlet CWT of a real sequence by direct summation.
pub fn cwt(x: &[f64], scales: &ScaleSet) -> Result<Scalogram> {
    let plan = CwtPlan::new(x.len(), scales)?;
    Ok(Scalogram {
        values: plan.transform(x),
        len: x.len(),
        n_scales: scales.len(),
    })
}

/// Morlet CWT of a real sequence through FFT convolution.
pub fn cwt_fft(x: &[f64], scales: &ScaleSet) -> Result<Scalogram> {
    let plan = CwtPlan::new(x.len(), scales)?;
    Ok(Scalogram {
        values: plan.transform_fft(x),
        len: x.len(),
        n_scales: scales.len(),
    })
}
