//! Reshaping a `[T, D]` sequence into per-channel `period x columns` maps and
//! back. Rows index the position inside a period, columns index successive
//! periods, and the tail of the last column is zero-padded.

use crate::autodiff::{Graph, Var, PAD};
use crate::error::{Result, WftError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodMap2D {
    /// `[D, period, n_cols]`.
    pub data: Tensor,
    pub period: usize,
    pub original_len: usize,
    pub pad_count: usize,
}

impl PeriodMap2D {
    pub fn n_cols(&self) -> usize {
        self.original_len.div_ceil(self.period)
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }
}

fn check_period(len: usize, period: usize) -> Result<()> {
    if period == 0 || period > len {
        return Err(WftError::config(format!(
            "period must lie in 1..={len}, got {period}"
        )));
    }
    Ok(())
}

/// Source index into a flattened `[len, d]` sequence for every cell of the
/// folded `[d, period, cols]` map.
fn fold_index(len: usize, d: usize, period: usize) -> Vec<usize> {
    let cols = len.div_ceil(period);
    let mut index = Vec::with_capacity(d * period * cols);
    for ch in 0..d {
        for r in 0..period {
            for c in 0..cols {
                let t = c * period + r;
                index.push(if t < len { t * d + ch } else { PAD });
            }
        }
    }
    index
}

fn unfold_index(len: usize, d: usize, period: usize) -> Vec<usize> {
    let cols = len.div_ceil(period);
    (0..len)
        .flat_map(|t| {
            let (c, r) = (t / period, t % period);
            (0..d).map(move |ch| (ch * period + r) * cols + c)
        })
        .collect()
}

pub fn fold(x: &Tensor, period: usize) -> Result<PeriodMap2D> {
    if x.rank() != 2 {
        return Err(WftError::dim(format!(
            "fold expects [T, D], got {:?}",
            x.shape()
        )));
    }
    let (len, d) = (x.shape()[0], x.shape()[1]);
    check_period(len, period)?;
    let cols = len.div_ceil(period);
    let src = x.data();
    let data = fold_index(len, d, period)
        .into_iter()
        .map(|i| if i == PAD { 0.0 } else { src[i] })
        .collect();
    Ok(PeriodMap2D {
        data: Tensor::new(&[d, period, cols], data)?,
        period,
        original_len: len,
        pad_count: period * cols - len,
    })
}

pub fn unfold(map: &PeriodMap2D) -> Result<Tensor> {
    let d = map.channels();
    let src = map.data.data();
    let data = unfold_index(map.original_len, d, map.period)
        .into_iter()
        .map(|i| src[i])
        .collect();
    Tensor::new(&[map.original_len, d], data)
}

/// [`fold`] on a graph node; gradients scatter back, padding receives none.
pub fn fold_var(g: &mut Graph, x: Var, period: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 {
        return Err(WftError::dim(format!("fold expects [T, D], got {s:?}")));
    }
    let (len, d) = (s[0], s[1]);
    check_period(len, period)?;
    let cols = len.div_ceil(period);
    g.gather(x, fold_index(len, d, period), &[d, period, cols])
}

/// [`unfold`] on a graph node holding a `[D, period, cols]` map.
pub fn unfold_var(g: &mut Graph, map: Var, period: usize, len: usize) -> Result<Var> {
    let s = g.shape(map).to_vec();
    if s.len() != 3 || s[1] != period || s[2] != len.div_ceil(period) {
        return Err(WftError::dim(format!(
            "map {s:?} does not match period {period} and length {len}"
        )));
    }
    let d = s[0];
    g.gather(map, unfold_index(len, d, period), &[len, d])
}
