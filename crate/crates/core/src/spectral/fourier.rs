use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Result, WftError};
use crate::tensor::Tensor;

/// One complex Fourier coefficient.
pub type ComplexPair = Complex64;

/// Coefficients `C_t`, `0 <= t < T`, of a real sequence of length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    pub coeffs: Vec<ComplexPair>,
}

impl ComplexSpectrum {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm()).collect()
    }
}

/// Channel-averaged magnitudes `a_i = |C_i|` for `0 <= i < T`.
///
/// Index 0 is the DC term. It is kept so that indices line up with
/// frequencies, but period selection and periodicity weighting skip it.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeSpectrum {
    pub amps: Vec<f64>,
}

impl AmplitudeSpectrum {
    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn dc(&self) -> f64 {
        self.amps[0]
    }
}

fn twiddle(t: usize, n: usize, len: usize) -> Complex64 {
    // reduce before scaling so the angle stays in [0, 2pi)
    let k = ((t as u128 * n as u128) % len as u128) as f64;
    Complex64::from_polar(1.0, -2.0 * PI * k / len as f64)
}

/// Direct O(T^2) evaluation of `C_t = sum_n x_n exp(-j 2 pi t n / T)`.
pub fn dft(x: &[f64]) -> Result<ComplexSpectrum> {
    if x.is_empty() {
        return Err(WftError::dim("dft of an empty sequence"));
    }
    let len = x.len();
    let coeffs = (0..len)
        .map(|t| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| twiddle(t, n, len) * v)
                .sum()
        })
        .collect();
    Ok(ComplexSpectrum { coeffs })
}

/// Single DFT coefficient at `bin` of a length-`len` real sequence.
pub fn dft_bin(x: impl Iterator<Item = f64>, len: usize, bin: usize) -> Complex64 {
    x.enumerate().map(|(n, v)| twiddle(bin, n, len) * v).sum()
}

/// Fourier coefficients of a real sequence. Power-of-two lengths use the
/// iterative radix-2 transform; other lengths use Bluestein's chirp-z
/// reformulation on a padded radix-2 convolution.
pub fn fft(x: &[f64]) -> Result<ComplexSpectrum> {
    if x.is_empty() {
        return Err(WftError::dim("fft of an empty sequence"));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if x.len().is_power_of_two() {
        fft_in_place(&mut buf, false);
    } else {
        buf = bluestein(&buf);
    }
    Ok(ComplexSpectrum { coeffs: buf })
}

/// `exp(-j pi n^2 / len)` with `n^2` reduced modulo `2 len`.
fn chirp(n: usize, len: usize) -> Complex64 {
    let k = ((n as u128 * n as u128) % (2 * len as u128)) as f64;
    Complex64::from_polar(1.0, -PI * k / len as f64)
}

fn bluestein(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();
    let w: Vec<Complex64> = (0..n).map(|i| chirp(i, n)).collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        a[i] = x[i] * w[i];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = w[0].conj();
    for i in 1..n {
        b[i] = w[i].conj();
        b[m - i] = w[i].conj();
    }
    fft_in_place(&mut a, false);
    fft_in_place(&mut b, false);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    fft_in_place(&mut a, true);
    (0..n).map(|k| a[k] * w[k]).collect()
}

/// In-place radix-2 transform of a power-of-two buffer. The inverse includes
/// the `1/N` factor.
pub(crate) fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "radix-2 transform needs a power of two");
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut half = 1;
    while half < n {
        let span = half * 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * PI * k as f64 / half as f64))
            .collect();
        for start in (0..n).step_by(span) {
            for (k, w) in twiddles.iter().enumerate() {
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        half = span;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Mean over channels of the per-channel magnitude spectrum of `[T, D]` data.
pub fn amplitude_spectrum(x: &Tensor) -> Result<AmplitudeSpectrum> {
    if x.rank() != 2 {
        return Err(WftError::dim(format!(
            "amplitude_spectrum expects [T, D], got {:?}",
            x.shape()
        )));
    }
    let (len, d) = (x.shape()[0], x.shape()[1]);
    if len < 2 {
        return Err(WftError::dim("amplitude_spectrum needs T >= 2"));
    }
    let mut amps = vec![0.0; len];
    for ch in 0..d {
        let spec = fft(&x.column(ch))?;
        for (a, c) in amps.iter_mut().zip(&spec.coeffs) {
            *a += c.norm();
        }
    }
    amps.iter_mut().for_each(|a| *a /= d as f64);
    Ok(AmplitudeSpectrum { amps })
}
