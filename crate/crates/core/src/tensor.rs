//! Dense row-major `f64` tensors and the deterministic random stream used for
//! parameter initialisation and dropout.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, WftError};

/// Dense real array in row-major order with optional gradient storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(WftError::dim(format!(
                "shape {shape:?} has a zero-sized dimension"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(WftError::dim(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    /// Builds a `[rows, cols]` tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(WftError::dim("ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(WftError::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Column `c` of a rank-2 tensor.
    pub fn column(&self, c: usize) -> Vec<f64> {
        let cols = self.shape[1];
        self.data.iter().skip(c).step_by(cols).copied().collect()
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if self.shape.len() != 2 || start >= end || end > self.shape[0] {
            return Err(WftError::dim(format!(
                "row range {start}..{end} invalid for shape {:?}",
                self.shape
            )));
        }
        let cols = self.shape[1];
        Self::new(
            &[end - start, cols],
            self.data[start * cols..end * cols].to_vec(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// Counter-addressed random stream. Identical `(seed, stream, counter)`
/// always reproduce the same draws.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Self {
            seed: self.seed,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..=hi)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_params(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(WftError::config("fan_in must be at least 1"));
    }
    let bound = (1.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.uniform_in(-bound, bound)).collect();
    Ok(Tensor::new(shape, data)?.with_grad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&[4, 5], 3, &mut RngState::new(11)).unwrap();
        let b = init_params(&[4, 5], 3, &mut RngState::new(11)).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.requires_grad);
    }

    #[test]
    fn init_respects_bound() {
        let t = init_params(&[1000], 1, &mut RngState::new(3)).unwrap();
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let t = init_params(&[1000], 16, &mut RngState::new(3)).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn init_sample_mean_is_centered() {
        let t = init_params(&[100_000], 1, &mut RngState::new(2024)).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn init_rejects_zero_fan_in() {
        assert!(init_params(&[2], 0, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn forked_streams_differ_but_repeat() {
        let base = RngState::new(5);
        let mut a = base.fork(1);
        let mut b = base.fork(2);
        let mut a2 = base.fork(1);
        let xa = a.next_u64();
        assert_ne!(xa, b.next_u64());
        assert_eq!(xa, a2.next_u64());
        assert!(a.counter() > 0);
    }
}
