//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] consumes the tape and returns the gradient of a scalar
//! node with respect to every node that depends on a parameter leaf.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, WftError};
use crate::spectral::CwtPlan;
use crate::tensor::{RngState, Tensor};

/// Index marking a zero-filled position in a gather map.
pub const PAD: usize = usize::MAX;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        pad_h: usize,
        pad_w: usize,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Reshape(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    ScaleBy {
        x: Var,
        w: Var,
        at: usize,
    },
    ChannelAffine {
        x: Var,
        scale: Vec<f64>,
    },
    DftAmplitude {
        x: Var,
        bins: Vec<usize>,
        coeffs: Vec<Complex64>,
    },
    CwtModulus {
        x: Var,
        plan: Arc<CwtPlan>,
        coeffs: Vec<Complex64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Dot {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Leaf honouring the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad,
        )
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    /// `y[.., j] = sum_i x[.., i] * w[i, j] + b[j]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        let inner = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != inner || bs != [ws[1]] {
            return Err(WftError::dim(format!(
                "linear: input {} incompatible with weight {} and bias {}",
                shape_str(&xs),
                shape_str(&ws),
                shape_str(&bs)
            )));
        }
        let out = ws[1];
        let rows = self.value(x).len() / inner;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut y = Vec::with_capacity(rows * out);
        for r in 0..rows {
            y.extend_from_slice(bv);
            let yr = &mut y[r * out..(r + 1) * out];
            for (i, &xi) in xv[r * inner..(r + 1) * inner].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (yj, &wij) in yr.iter_mut().zip(&wv[i * out..(i + 1) * out]) {
                    *yj += xi * wij;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(shape, y, Op::Linear { x, w, b }, rg))
    }

    /// Same-padded 2D cross-correlation; kernel sides must be odd.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let ks = self.shape(k).to_vec();
        if ks.len() != 4 {
            return Err(WftError::dim(format!(
                "conv2d: kernel must be rank 4, got {}",
                shape_str(&ks)
            )));
        }
        if ks[2].is_multiple_of(2) || ks[3].is_multiple_of(2) {
            return Err(WftError::config(format!(
                "conv2d: same padding needs odd kernel sides, got {}x{}",
                ks[2], ks[3]
            )));
        }
        self.conv2d_padded(x, k, b, (ks[2] - 1) / 2, (ks[3] - 1) / 2)
    }

    /// 2D cross-correlation with explicit zero padding per axis.
    pub fn conv2d_padded(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        pad_h: usize,
        pad_w: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || bs != [ks[0]] {
            return Err(WftError::dim(format!(
                "conv2d: input {} incompatible with kernels {} and bias {}",
                shape_str(&xs),
                shape_str(&ks),
                shape_str(&bs)
            )));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
        if h + 2 * pad_h < kh || w + 2 * pad_w < kw {
            return Err(WftError::dim(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad_h,
                w + 2 * pad_w
            )));
        }
        let ho = h + 2 * pad_h - kh + 1;
        let wo = w + 2 * pad_w - kw + 1;
        let xv = self.value(x);
        let kv = self.value(k);
        let bv = self.value(b);
        let mut y = vec![0.0; cout * ho * wo];
        for o in 0..cout {
            y[o * ho * wo..(o + 1) * ho * wo]
                .iter_mut()
                .for_each(|v| *v = bv[o]);
            for c in 0..cin {
                let xc = &xv[c * h * w..(c + 1) * h * w];
                for u in 0..kh {
                    let (i0, i1) = valid_range(ho, h, u, pad_h);
                    for v in 0..kw {
                        let kval = kv[((o * cin + c) * kh + u) * kw + v];
                        if kval == 0.0 {
                            continue;
                        }
                        let (j0, j1) = valid_range(wo, w, v, pad_w);
                        if j0 >= j1 {
                            continue;
                        }
                        for i in i0..i1 {
                            let xi = i + u - pad_h;
                            let yrow = &mut y[(o * ho + i) * wo..(o * ho + i + 1) * wo];
                            let xrow = &xc[xi * w..(xi + 1) * w];
                            let xs = &xrow[j0 + v - pad_w..j1 + v - pad_w];
                            for (yj, xj) in yrow[j0..j1].iter_mut().zip(xs) {
                                *yj += kval * xj;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(k) || self.rg(b);
        Ok(self.push(
            vec![cout, ho, wo],
            y,
            Op::Conv2d {
                x,
                k,
                b,
                pad_h,
                pad_w,
            },
            rg,
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, y, Op::Gelu(x), rg)
    }

    /// Inverted dropout. Identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(WftError::config(format!(
                "dropout rate must lie in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let y = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::Dropout { x, mask }, rg))
    }

    /// Softmax over a rank-1 node, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() || self.shape(x).len() != 1 {
            return Err(WftError::dim(format!(
                "softmax expects a non-empty vector, got {}",
                shape_str(self.shape(x))
            )));
        }
        let y = softmax(v);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::Softmax(x), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(WftError::dim(format!(
                "{what}: shapes {} and {} differ",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, y, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, y, Op::Mul(a, b), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, y, Op::Scale(x, c), rg)
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(WftError::dim(format!(
                "add_const: {} values for shape {}",
                c.len(),
                shape_str(self.shape(x))
            )));
        }
        let y = self.value(x).iter().zip(c).map(|(a, b)| a + b).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::AddConst(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(WftError::dim(format!(
                "cannot reshape {} into {}",
                shape_str(self.shape(x)),
                shape_str(shape)
            )));
        }
        let y = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), y, Op::Reshape(x), rg))
    }

    /// `y[i] = x[index[i]]`, or zero where `index[i] == PAD`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if shape.iter().product::<usize>() != index.len() {
            return Err(WftError::dim(format!(
                "gather: {} indices for shape {}",
                index.len(),
                shape_str(shape)
            )));
        }
        if let Some(bad) = index.iter().find(|&&i| i != PAD && i >= n) {
            return Err(WftError::dim(format!(
                "gather: index {bad} out of range for {n} elements"
            )));
        }
        let xv = self.value(x);
        let y = index
            .iter()
            .map(|&i| if i == PAD { 0.0 } else { xv[i] })
            .collect();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), y, Op::Gather { x, index }, rg))
    }

    /// Transpose of a rank-2 node.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(WftError::dim(format!(
                "transpose expects rank 2, got {}",
                shape_str(&s)
            )));
        }
        let (r, c) = (s[0], s[1]);
        let index = (0..c)
            .flat_map(|j| (0..r).map(move |i| i * c + j))
            .collect();
        self.gather(x, index, &[c, r])
    }

    /// Rows `start..end` of a rank-2 node.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start >= end || end > s[0] {
            return Err(WftError::dim(format!(
                "slice_rows {start}..{end} invalid for {}",
                shape_str(&s)
            )));
        }
        let index = (start * s[1]..end * s[1]).collect();
        self.gather(x, index, &[end - start, s[1]])
    }

    /// `x * w[at]` where `w` is itself a node.
    pub fn scale_by(&mut self, x: Var, w: Var, at: usize) -> Result<Var> {
        if at >= self.value(w).len() {
            return Err(WftError::dim(format!(
                "scale_by: element {at} of {}",
                shape_str(self.shape(w))
            )));
        }
        let c = self.value(w)[at];
        let y = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(shape, y, Op::ScaleBy { x, w, at }, rg))
    }

    /// `y[t, c] = x[t, c] * scale[c] + shift[c]` on a rank-2 node.
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || scale.len() != s[1] || shift.len() != s[1] {
            return Err(WftError::dim(format!(
                "channel_affine: {} channels of scale/shift for {}",
                scale.len(),
                shape_str(&s)
            )));
        }
        let cols = s[1];
        let y = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * scale[i % cols] + shift[i % cols])
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            s,
            y,
            Op::ChannelAffine {
                x,
                scale: scale.to_vec(),
            },
            rg,
        ))
    }

    /// Channel-averaged DFT magnitudes of a `[T, D]` node at the given bins.
    pub fn dft_amplitude(&mut self, x: Var, bins: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || bins.is_empty() {
            return Err(WftError::dim(format!(
                "dft_amplitude expects [T, D] and at least one bin, got {}",
                shape_str(&s)
            )));
        }
        let (t_len, d) = (s[0], s[1]);
        let xv = self.value(x);
        let mut coeffs = Vec::with_capacity(bins.len() * d);
        let mut y = Vec::with_capacity(bins.len());
        for &bin in bins {
            let mut acc = 0.0;
            for ch in 0..d {
                let c = crate::spectral::dft_bin((0..t_len).map(|t| xv[t * d + ch]), t_len, bin);
                acc += c.norm();
                coeffs.push(c);
            }
            y.push(acc / d as f64);
        }
        let rg = self.rg(x);
        Ok(self.push(
            vec![bins.len()],
            y,
            Op::DftAmplitude {
                x,
                bins: bins.to_vec(),
                coeffs,
            },
            rg,
        ))
    }

    /// Scalogram moduli of every column of a `[T, D]` node, laid out `[D, T, S]`.
    pub fn cwt_modulus(&mut self, x: Var, plan: &Arc<CwtPlan>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != plan.len() {
            return Err(WftError::dim(format!(
                "cwt_modulus: input {} does not match plan length {}",
                shape_str(&s),
                plan.len()
            )));
        }
        let (t_len, d) = (s[0], s[1]);
        let n_scales = plan.scales().len();
        let xv = self.value(x);
        let mut coeffs = Vec::with_capacity(d * t_len * n_scales);
        for ch in 0..d {
            let col: Vec<f64> = (0..t_len).map(|t| xv[t * d + ch]).collect();
            coeffs.extend(plan.transform(&col));
        }
        let y = coeffs.iter().map(|c| c.norm()).collect();
        let rg = self.rg(x);
        Ok(self.push(
            vec![d, t_len, n_scales],
            y,
            Op::CwtModulus {
                x,
                plan: Arc::clone(plan),
                coeffs,
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        if target.len() != self.value(pred).len() {
            return Err(WftError::dim(format!(
                "mse: prediction {} vs {} targets",
                shape_str(self.shape(pred)),
                target.len()
            )));
        }
        let n = target.len() as f64;
        let y = self
            .value(pred)
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            vec![1],
            vec![y],
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Scalar `sum_i x[i] * weights[i]`.
    pub fn dot(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(WftError::dim("dot: length mismatch"));
        }
        let y = self.value(x).iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(
            vec![1],
            vec![y],
            Op::Dot {
                x,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from the scalar node `root`.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(WftError::dim(format!(
                "backward needs a scalar root, got {}",
                shape_str(&self.nodes[root.0].shape)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = &nodes[w.0].shape;
                let (inner, out) = (ws[0], ws[1]);
                let rows = g.len() / out;
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value;
                if wants(*x) {
                    let gx = slot(grads, *x, xv.len());
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for i in 0..inner {
                            let wr = &wv[i * out..(i + 1) * out];
                            gx[r * inner + i] += gr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if wants(*w) {
                    let gw = slot(grads, *w, wv.len());
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for i in 0..inner {
                            let xi = xv[r * inner + i];
                            if xi == 0.0 {
                                continue;
                            }
                            for (gwij, gj) in gw[i * out..(i + 1) * out].iter_mut().zip(gr) {
                                *gwij += xi * gj;
                            }
                        }
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, out);
                    for r in 0..rows {
                        for (gbj, gj) in gb.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                            *gbj += gj;
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                k,
                b,
                pad_h,
                pad_w,
            } => {
                let (pad_h, pad_w) = (*pad_h, *pad_w);
                let xs = &nodes[x.0].shape;
                let ks = &nodes[k.0].shape;
                let (cin, h, w) = (xs[0], xs[1], xs[2]);
                let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
                let (ho, wo) = (node.shape[1], node.shape[2]);
                let xv = &nodes[x.0].value;
                let kv = &nodes[k.0].value;
                if wants(*b) {
                    let gb = slot(grads, *b, cout);
                    for (o, gbo) in gb.iter_mut().enumerate() {
                        *gbo += g[o * ho * wo..(o + 1) * ho * wo].iter().sum::<f64>();
                    }
                }
                if wants(*k) {
                    let gk = slot(grads, *k, kv.len());
                    for o in 0..cout {
                        for c in 0..cin {
                            let xc = &xv[c * h * w..(c + 1) * h * w];
                            for u in 0..kh {
                                let (i0, i1) = valid_range(ho, h, u, pad_h);
                                for v in 0..kw {
                                    let (j0, j1) = valid_range(wo, w, v, pad_w);
                                    if j0 >= j1 {
                                        continue;
                                    }
                                    let mut acc = 0.0;
                                    for i in i0..i1 {
                                        let xi = i + u - pad_h;
                                        let grow = &g[(o * ho + i) * wo..(o * ho + i + 1) * wo];
                                        let xrow = &xc[xi * w..(xi + 1) * w];
                                        let xs = &xrow[j0 + v - pad_w..j1 + v - pad_w];
                                        for (gj, xj) in grow[j0..j1].iter().zip(xs) {
                                            acc += gj * xj;
                                        }
                                    }
                                    gk[((o * cin + c) * kh + u) * kw + v] += acc;
                                }
                            }
                        }
                    }
                }
                if wants(*x) {
                    let gx = slot(grads, *x, xv.len());
                    for o in 0..cout {
                        for c in 0..cin {
                            let gxc = &mut gx[c * h * w..(c + 1) * h * w];
                            for u in 0..kh {
                                let (i0, i1) = valid_range(ho, h, u, pad_h);
                                for v in 0..kw {
                                    let kval = kv[((o * cin + c) * kh + u) * kw + v];
                                    if kval == 0.0 {
                                        continue;
                                    }
                                    let (j0, j1) = valid_range(wo, w, v, pad_w);
                                    if j0 >= j1 {
                                        continue;
                                    }
                                    for i in i0..i1 {
                                        let xi = i + u - pad_h;
                                        let grow = &g[(o * ho + i) * wo..(o * ho + i + 1) * wo];
                                        let gxrow = &mut gxc[xi * w..(xi + 1) * w];
                                        let gxs = &mut gxrow[j0 + v - pad_w..j1 + v - pad_w];
                                        for (gxj, gj) in gxs.iter_mut().zip(&grow[j0..j1]) {
                                            *gxj += kval * gj;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = &nodes[x.0].value;
                let gx = slot(grads, *x, xv.len());
                for ((gxi, &xi), gi) in gx.iter_mut().zip(xv).zip(g) {
                    *gxi += gi * gelu_grad(xi);
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, *x, mask.len());
                for ((gxi, m), gi) in gx.iter_mut().zip(mask).zip(g) {
                    *gxi += gi * m;
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                let gx = slot(grads, *x, y.len());
                for ((gxi, yi), gi) in gx.iter_mut().zip(y).zip(g) {
                    *gxi += yi * (gi - dot);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(*v) {
                        let gv = slot(grads, *v, g.len());
                        gv.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if wants(*v) {
                        let ov = &nodes[other.0].value;
                        let gv = slot(grads, *v, g.len());
                        for ((s, gi), o) in gv.iter_mut().zip(g).zip(ov) {
                            *s += gi * o;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(s, gi)| *s += gi * c);
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                let gx = slot(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
            }
            Op::Gather { x, index } => {
                let n = nodes[x.0].value.len();
                let gx = slot(grads, *x, n);
                for (&i, gi) in index.iter().zip(g) {
                    if i != PAD {
                        gx[i] += gi;
                    }
                }
            }
            Op::ScaleBy { x, w, at } => {
                let c = nodes[w.0].value[*at];
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    gx.iter_mut().zip(g).for_each(|(s, gi)| *s += gi * c);
                }
                if wants(*w) {
                    let xv = &nodes[x.0].value;
                    let dot: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                    let nw = nodes[w.0].value.len();
                    slot(grads, *w, nw)[*at] += dot;
                }
            }
            Op::ChannelAffine { x, scale } => {
                let cols = scale.len();
                let gx = slot(grads, *x, g.len());
                for (i, (s, gi)) in gx.iter_mut().zip(g).enumerate() {
                    *s += gi * scale[i % cols];
                }
            }
            Op::DftAmplitude { x, bins, coeffs } => {
                let xs = &nodes[x.0].shape;
                let (t_len, d) = (xs[0], xs[1]);
                let gx = slot(grads, *x, t_len * d);
                for (bi, &bin) in bins.iter().enumerate() {
                    let step = -2.0 * std::f64::consts::PI / t_len as f64;
                    for ch in 0..d {
                        let c = coeffs[bi * d + ch];
                        let mag = c.norm();
                        if mag < 1e-300 {
                            continue;
                        }
                        let scale = g[bi] / (d as f64 * mag);
                        for t in 0..t_len {
                            let phase = step * ((bin * t) % t_len) as f64;
                            // d|C|/dx_t = Re(conj(C) e^{i phase}) / |C|
                            gx[t * d + ch] +=
                                scale * (c.re * phase.cos() + c.im * phase.sin());
                        }
                    }
                }
            }
            Op::CwtModulus { x, plan, coeffs } => {
                let xs = &nodes[x.0].shape;
                let (t_len, d) = (xs[0], xs[1]);
                let n_scales = plan.scales().len();
                let gx = slot(grads, *x, t_len * d);
                let mut upstream = vec![Complex64::new(0.0, 0.0); t_len * n_scales];
                for ch in 0..d {
                    let base = ch * t_len * n_scales;
                    for (i, u) in upstream.iter_mut().enumerate() {
                        let c = coeffs[base + i];
                        let mag = c.norm();
                        *u = if mag < 1e-300 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            c * (g[base + i] / mag)
                        };
                    }
                    let col_grad = plan.adjoint(&upstream);
                    for (t, v) in col_grad.into_iter().enumerate() {
                        gx[t * d + ch] += v;
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pv = &nodes[pred.0].value;
                let n = target.len() as f64;
                let gp = slot(grads, *pred, pv.len());
                for ((s, p), t) in gp.iter_mut().zip(pv).zip(target) {
                    *s += g[0] * 2.0 * (p - t) / n;
                }
            }
            Op::Dot { x, weights } => {
                let gx = slot(grads, *x, weights.len());
                gx.iter_mut()
                    .zip(weights)
                    .for_each(|(s, w)| *s += g[0] * w);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Output positions `i` for which `i + offset - pad` indexes inside `0..len`.
fn valid_range(out_len: usize, len: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset);
    let hi = (len + pad).saturating_sub(offset).min(out_len);
    (lo, hi.max(lo))
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable softmax of a slice.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
