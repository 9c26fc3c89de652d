//! The residual wavelet-Fourier block.
//!
//! The Fourier branch folds the sequence by each dominant period, runs a
//! multi-kernel convolution stack over every folded map and mixes the
//! unfolded results with softmax weights taken from the period amplitudes.
//! The wavelet branch convolves the Morlet scalogram and collapses its scale
//! axis with a `1 x S` strip kernel. The two are blended with weight
//! `alpha^n` and added back onto the block input.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Result, WftError};
use crate::folding::{fold_var, unfold_var};
use crate::spectral::{amplitude_spectrum, topk_periods, AmplitudeSpectrum, CwtPlan, PeriodSet};
use crate::tensor::{init_params, RngState, Tensor};

/// Side lengths of the parallel square kernels.
pub const INCEPTION_KERNELS: [usize; 3] = [1, 3, 5];

/// Which branches a block evaluates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchMode {
    #[default]
    Fused,
    FourierOnly,
    WaveletOnly,
}

impl std::str::FromStr for BranchMode {
    type Err = WftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(BranchMode::Fused),
            "fourier-only" => Ok(BranchMode::FourierOnly),
            "wavelet-only" => Ok(BranchMode::WaveletOnly),
            other => Err(WftError::config(format!(
                "unknown mode `{other}` (expected fused, fourier-only or wavelet-only)"
            ))),
        }
    }
}

impl std::fmt::Display for BranchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BranchMode::Fused => "fused",
            BranchMode::FourierOnly => "fourier-only",
            BranchMode::WaveletOnly => "wavelet-only",
        })
    }
}

/// One `[D, D, s, s]` kernel and `[D]` bias per entry of [`INCEPTION_KERNELS`].
#[derive(Clone, Debug, PartialEq)]
pub struct InceptionParams {
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl InceptionParams {
    pub fn init(d: usize, rng: &mut RngState) -> Result<Self> {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for size in INCEPTION_KERNELS {
            let fan_in = d * size * size;
            kernels.push(init_params(&[d, d, size, size], fan_in, rng)?);
            biases.push(init_params(&[d], fan_in, rng)?);
        }
        Ok(Self { kernels, biases })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            kernels: INCEPTION_KERNELS
                .iter()
                .map(|&s| Tensor::zeros(&[d, d, s, s]).with_grad())
                .collect(),
            biases: INCEPTION_KERNELS
                .iter()
                .map(|_| Tensor::zeros(&[d]).with_grad())
                .collect(),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for ((size, k), b) in INCEPTION_KERNELS.iter().zip(&self.kernels).zip(&self.biases) {
            out.push((format!("{prefix}.conv{size}.weight"), k));
            out.push((format!("{prefix}.conv{size}.bias"), b));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (k, b) in self.kernels.iter_mut().zip(self.biases.iter_mut()) {
            out.push(k);
            out.push(b);
        }
        out
    }

    pub fn register(&self, g: &mut Graph, order: &mut Vec<Var>) -> InceptionVars {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            let kv = g.leaf(k);
            let bv = g.leaf(b);
            order.push(kv);
            order.push(bv);
            kernels.push(kv);
            biases.push(bv);
        }
        InceptionVars { kernels, biases }
    }
}

#[derive(Clone, Debug)]
pub struct InceptionVars {
    pub kernels: Vec<Var>,
    pub biases: Vec<Var>,
}

/// Learnable state of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct WftBlockParams {
    pub fourier_inception: InceptionParams,
    pub wavelet_inception: InceptionParams,
    /// `[D, D, 1, S]`.
    pub strip_kernel: Tensor,
    pub strip_bias: Tensor,
}

impl WftBlockParams {
    pub fn init(d: usize, n_scales: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            fourier_inception: InceptionParams::init(d, rng)?,
            wavelet_inception: InceptionParams::init(d, rng)?,
            strip_kernel: init_params(&[d, d, 1, n_scales], d * n_scales, rng)?,
            strip_bias: init_params(&[d], d * n_scales, rng)?,
        })
    }

    pub fn zeros(d: usize, n_scales: usize) -> Self {
        Self {
            fourier_inception: InceptionParams::zeros(d),
            wavelet_inception: InceptionParams::zeros(d),
            strip_kernel: Tensor::zeros(&[d, d, 1, n_scales]).with_grad(),
            strip_bias: Tensor::zeros(&[d]).with_grad(),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = self.fourier_inception.named(&format!("{prefix}.fourier"));
        out.extend(self.wavelet_inception.named(&format!("{prefix}.wavelet")));
        out.push((format!("{prefix}.strip.weight"), &self.strip_kernel));
        out.push((format!("{prefix}.strip.bias"), &self.strip_bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.fourier_inception.named_mut();
        out.extend(self.wavelet_inception.named_mut());
        out.push(&mut self.strip_kernel);
        out.push(&mut self.strip_bias);
        out
    }

    pub fn register(&self, g: &mut Graph, order: &mut Vec<Var>) -> BlockVars {
        let fourier = self.fourier_inception.register(g, order);
        let wavelet = self.wavelet_inception.register(g, order);
        let strip_kernel = g.leaf(&self.strip_kernel);
        let strip_bias = g.leaf(&self.strip_bias);
        order.push(strip_kernel);
        order.push(strip_bias);
        BlockVars {
            fourier,
            wavelet,
            strip_kernel,
            strip_bias,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub fourier: InceptionVars,
    pub wavelet: InceptionVars,
    pub strip_kernel: Var,
    pub strip_bias: Var,
}

/// Non-learnable block settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    /// Number of dominant periods folded by the Fourier branch.
    pub top_k: usize,
    /// Exponent applied to the periodicity weight before blending.
    pub exponent: u32,
    pub mode: BranchMode,
}

/// Mean of the parallel same-padded convolutions, then GELU.
pub fn inception_forward(g: &mut Graph, map: Var, vars: &InceptionVars) -> Result<Var> {
    let s = g.shape(map).to_vec();
    if s.len() != 3 {
        return Err(WftError::dim(format!(
            "inception expects [D, H, W], got {s:?}"
        )));
    }
    let mut acc: Option<Var> = None;
    for (&k, &b) in vars.kernels.iter().zip(&vars.biases) {
        let y = g.conv2d(map, k, b)?;
        acc = Some(match acc {
            None => y,
            Some(a) => g.add(a, y)?,
        });
    }
    let sum = acc.ok_or_else(|| WftError::dim("inception stack has no kernels"))?;
    let mean = g.scale(sum, 1.0 / vars.kernels.len() as f64);
    Ok(g.gelu(mean))
}

/// Output of the Fourier branch with the periods it used.
pub struct FourierOutput {
    pub out: Var,
    pub periods: PeriodSet,
}

/// Fold by each of the top-`k` periods, convolve, unfold, and mix with
/// softmax weights over the selected amplitudes.
pub fn fourier_branch(
    g: &mut Graph,
    x: Var,
    vars: &InceptionVars,
    amps: &AmplitudeSpectrum,
    top_k: usize,
) -> Result<FourierOutput> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 || s[0] < 2 {
        return Err(WftError::dim(format!(
            "Fourier branch expects [T_e >= 2, D], got {s:?}"
        )));
    }
    let len = s[0];
    let periods = topk_periods(amps, top_k, len)?;
    // same magnitudes as `amps`, but differentiable with respect to x
    let weights = g.dft_amplitude(x, &periods.freq_indices())?;
    let weights = g.softmax(weights)?;
    let mut acc: Option<Var> = None;
    for (i, entry) in periods.entries.iter().enumerate() {
        let map = fold_var(g, x, entry.period)?;
        let map = inception_forward(g, map, vars)?;
        let back = unfold_var(g, map, entry.period, len)?;
        let weighted = g.scale_by(back, weights, i)?;
        acc = Some(match acc {
            None => weighted,
            Some(a) => g.add(a, weighted)?,
        });
    }
    let out = acc.ok_or_else(|| WftError::dim("no period selected"))?;
    Ok(FourierOutput { out, periods })
}

/// Scalogram modulus, convolution stack, then the strip kernel collapsing the
/// scale axis.
pub fn wavelet_branch(
    g: &mut Graph,
    x: Var,
    vars: &InceptionVars,
    strip_kernel: Var,
    strip_bias: Var,
    plan: &Arc<CwtPlan>,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 {
        return Err(WftError::dim(format!(
            "wavelet branch expects [T_e, D], got {s:?}"
        )));
    }
    if s[0] < 8 {
        return Err(WftError::config(format!(
            "wavelet branch needs T_e >= 8, got {}",
            s[0]
        )));
    }
    let (len, d) = (s[0], s[1]);
    let scalogram = g.cwt_modulus(x, plan)?;
    let features = inception_forward(g, scalogram, vars)?;
    let collapsed = g.conv2d_padded(features, strip_kernel, strip_bias, 0, 0)?;
    if g.shape(collapsed)[2] != 1 {
        return Err(WftError::dim(format!(
            "strip kernel width must equal the scale count {}",
            plan.scales().len()
        )));
    }
    let flat = g.reshape(collapsed, &[d, len])?;
    g.transpose(flat)
}

fn blend_weight(alpha: f64, exponent: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(WftError::Contract(format!(
            "periodicity weight must lie in [0, 1], got {alpha}"
        )));
    }
    if exponent == 0 {
        return Err(WftError::config("blend exponent must be at least 1"));
    }
    Ok(alpha.powi(exponent as i32))
}

/// `alpha^n * xf + (1 - alpha^n) * xw`; the endpoints return an operand
/// unchanged.
pub fn fuse(g: &mut Graph, xf: Var, xw: Var, alpha: f64, exponent: u32) -> Result<Var> {
    let w = blend_weight(alpha, exponent)?;
    if g.shape(xf) != g.shape(xw) {
        return Err(WftError::dim(format!(
            "fuse: {:?} vs {:?}",
            g.shape(xf),
            g.shape(xw)
        )));
    }
    if w == 1.0 {
        return Ok(xf);
    }
    if w == 0.0 {
        return Ok(xw);
    }
    let a = g.scale(xf, w);
    let b = g.scale(xw, 1.0 - w);
    g.add(a, b)
}

/// Tensor-level [`fuse`].
pub fn fuse_tensors(xf: &Tensor, xw: &Tensor, alpha: f64, exponent: u32) -> Result<Tensor> {
    let mut g = Graph::new();
    let a = g.constant(xf);
    let b = g.constant(xw);
    let y = fuse(&mut g, a, b, alpha, exponent)?;
    Ok(g.tensor(y))
}

/// Block output `x + branch(x)`, where `branch` depends on the mode.
pub fn wftblock_forward(
    g: &mut Graph,
    x: Var,
    vars: &BlockVars,
    cfg: &BlockConfig,
    plan: &Arc<CwtPlan>,
    alpha: f64,
) -> Result<Var> {
    let mixed = match cfg.mode {
        BranchMode::Fused => {
            let amps = amplitude_spectrum(&g.tensor(x))?;
            let f = fourier_branch(g, x, &vars.fourier, &amps, cfg.top_k)?.out;
            let w = wavelet_branch(
                g,
                x,
                &vars.wavelet,
                vars.strip_kernel,
                vars.strip_bias,
                plan,
            )?;
            fuse(g, f, w, alpha, cfg.exponent)?
        }
        BranchMode::FourierOnly => {
            let amps = amplitude_spectrum(&g.tensor(x))?;
            fourier_branch(g, x, &vars.fourier, &amps, cfg.top_k)?.out
        }
        BranchMode::WaveletOnly => wavelet_branch(
            g,
            x,
            &vars.wavelet,
            vars.strip_kernel,
            vars.strip_bias,
            plan,
        )?,
    };
    g.add(x, mixed)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::autodiff::gelu;
    use crate::spectral::default_scales;

    fn random(shape: &[usize], rng: &mut RngState) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.5, 1.5)).collect()).unwrap()
    }

    fn plan(len: usize) -> Arc<CwtPlan> {
        Arc::new(CwtPlan::new(len, &default_scales(len, 6.0).unwrap()).unwrap())
    }

    fn dirac_inception(d: usize) -> InceptionParams {
        let mut p = InceptionParams::zeros(d);
        for (k, &size) in p.kernels.iter_mut().zip(&INCEPTION_KERNELS) {
            let c = size / 2;
            for ch in 0..d {
                k.data_mut()[((ch * d + ch) * size + c) * size + c] = 1.0;
            }
        }
        p
    }

    #[test]
    fn dirac_inception_is_gelu() {
        let mut rng = RngState::new(1);
        let x = random(&[2, 4, 5], &mut rng);
        let p = dirac_inception(2);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let vars = p.register(&mut g, &mut Vec::new());
        let y = inception_forward(&mut g, xv, &vars).unwrap();
        for (a, b) in g.value(y).iter().zip(x.data()) {
            assert!((a - gelu(*b)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_inception_is_zero() {
        let mut rng = RngState::new(2);
        let x = random(&[3, 4, 4], &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let vars = InceptionParams::zeros(3).register(&mut g, &mut Vec::new());
        let y = inception_forward(&mut g, xv, &vars).unwrap();
        assert!(g.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fuse_examples() {
        let xf = Tensor::filled(&[3, 2], 2.0);
        let xw = Tensor::filled(&[3, 2], 4.0);
        assert_eq!(fuse_tensors(&xf, &xw, 1.0, 3).unwrap(), xf);
        assert_eq!(fuse_tensors(&xf, &xw, 0.0, 1).unwrap(), xw);
        let mid = fuse_tensors(&xf, &xw, 0.5, 1).unwrap();
        assert!(mid.data().iter().all(|v| *v == 3.0));
        assert!(matches!(
            fuse_tensors(&xf, &xw, 1.5, 1),
            Err(WftError::Contract(_))
        ));
        assert!(fuse_tensors(&xf, &xw, -0.1, 1).is_err());
    }

    #[test]
    fn fourier_single_period_equals_folded_path() {
        let mut rng = RngState::new(3);
        let x = random(&[24, 2], &mut rng);
        let p = InceptionParams::init(2, &mut rng).unwrap();
        let amps = amplitude_spectrum(&x).unwrap();

        let mut g = Graph::new();
        let xv = g.constant(&x);
        let vars = p.register(&mut g, &mut Vec::new());
        let out = fourier_branch(&mut g, xv, &vars, &amps, 1).unwrap();
        let period = out.periods.entries[0].period;
        let got = g.value(out.out).to_vec();

        let mut h = Graph::new();
        let xv = h.constant(&x);
        let vars = p.register(&mut h, &mut Vec::new());
        let m = fold_var(&mut h, xv, period).unwrap();
        let m = inception_forward(&mut h, m, &vars).unwrap();
        let y = unfold_var(&mut h, m, period, 24).unwrap();
        assert_eq!(got, h.value(y));
    }

    #[test]
    fn fourier_equal_amplitudes_average() {
        // equal cosines on bins 2 and 3 of a 24-sample sequence: periods 12 and 8
        let len = 24;
        let col: Vec<f64> = (0..len)
            .map(|t| {
                let t = t as f64;
                (2.0 * PI * 2.0 * t / 24.0).cos() + (2.0 * PI * 3.0 * t / 24.0).cos()
            })
            .collect();
        let x = Tensor::new(&[len, 1], col).unwrap();
        let mut rng = RngState::new(4);
        let p = InceptionParams::init(1, &mut rng).unwrap();
        let amps = amplitude_spectrum(&x).unwrap();

        let mut g = Graph::new();
        let xv = g.constant(&x);
        let vars = p.register(&mut g, &mut Vec::new());
        let out = fourier_branch(&mut g, xv, &vars, &amps, 2).unwrap();
        let mut periods = out.periods.periods();
        periods.sort_unstable();
        assert_eq!(periods, vec![8, 12]);
        let got = g.value(out.out).to_vec();

        let mut single = Vec::new();
        for period in [12, 8] {
            let mut h = Graph::new();
            let xv = h.constant(&x);
            let vars = p.register(&mut h, &mut Vec::new());
            let m = fold_var(&mut h, xv, period).unwrap();
            let m = inception_forward(&mut h, m, &vars).unwrap();
            let y = unfold_var(&mut h, m, period, len).unwrap();
            single.push(h.value(y).to_vec());
        }
        for (i, v) in got.iter().enumerate() {
            let mean = 0.5 * (single[0][i] + single[1][i]);
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn wavelet_zero_input_is_bias_driven() {
        let (len, d) = (16, 2);
        let pl = plan(len);
        let n_scales = pl.scales().len();
        let mut rng = RngState::new(5);
        let params = WftBlockParams::init(d, n_scales, &mut rng).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(&Tensor::zeros(&[len, d]));
        let vars = params.register(&mut g, &mut Vec::new());
        let y = wavelet_branch(
            &mut g,
            xv,
            &vars.wavelet,
            vars.strip_kernel,
            vars.strip_bias,
            &pl,
        )
        .unwrap();
        assert_eq!(g.shape(y), &[len, d]);

        // every scalogram cell is zero, so each inception channel is the
        // constant gelu(mean of biases); the strip kernel then sums those.
        let inc: Vec<f64> = (0..d)
            .map(|ch| {
                let b: f64 = params
                    .wavelet_inception
                    .biases
                    .iter()
                    .map(|t| t.data()[ch])
                    .sum();
                gelu(b / 3.0)
            })
            .collect();
        for o in 0..d {
            let mut expect = params.strip_bias.data()[o];
            for c in 0..d {
                for s in 0..n_scales {
                    expect += params.strip_kernel.data()[(o * d + c) * n_scales + s] * inc[c];
                }
            }
            for t in 0..len {
                assert!((g.value(y)[t * d + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wavelet_rejects_short_sequence() {
        let pl = Arc::new(CwtPlan::new(6, &default_scales(8, 6.0).unwrap()).unwrap());
        let params = WftBlockParams::zeros(1, pl.scales().len());
        let mut g = Graph::new();
        let xv = g.constant(&Tensor::zeros(&[6, 1]));
        let vars = params.register(&mut g, &mut Vec::new());
        let r = wavelet_branch(
            &mut g,
            xv,
            &vars.wavelet,
            vars.strip_kernel,
            vars.strip_bias,
            &pl,
        );
        assert!(matches!(r, Err(WftError::Config(_))));
    }

    #[test]
    fn zero_parameters_give_identity() {
        let (len, d) = (20, 3);
        let pl = plan(len);
        let params = WftBlockParams::zeros(d, pl.scales().len());
        let mut rng = RngState::new(6);
        let x = random(&[len, d], &mut rng);
        for mode in [BranchMode::Fused, BranchMode::FourierOnly, BranchMode::WaveletOnly] {
            let cfg = BlockConfig {
                top_k: 2,
                exponent: 1,
                mode,
            };
            let mut g = Graph::new();
            let xv = g.constant(&x);
            let vars = params.register(&mut g, &mut Vec::new());
            let y = wftblock_forward(&mut g, xv, &vars, &cfg, &pl, 0.37).unwrap();
            assert_eq!(g.shape(y), &[len, d]);
            assert!(g
                .value(y)
                .iter()
                .zip(x.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("fused".parse::<BranchMode>().unwrap(), BranchMode::Fused);
        assert_eq!(
            "wavelet-only".parse::<BranchMode>().unwrap(),
            BranchMode::WaveletOnly
        );
        assert!("both".parse::<BranchMode>().is_err());
        assert_eq!(BranchMode::FourierOnly.to_string(), "fourier-only");
    }
}
