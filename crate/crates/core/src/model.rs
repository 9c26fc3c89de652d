//! End-to-end forecaster: instance normalisation, embedding onto the
//! `T_s + T_p` encoder axis, stacked residual blocks, a pointwise output head
//! and de-normalisation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Result, WftError};
use crate::spectral::{default_scales, pwc, CwtPlan, ScaleSet, DEFAULT_OMEGA0};
use crate::tensor::{init_params, RngState, Tensor};
use crate::wftblock::{wftblock_forward, BlockConfig, BlockVars, BranchMode, WftBlockParams};

/// Floor applied to every standard deviation used for scaling.
pub const STD_FLOOR: f64 = 1e-5;

const POSITIONAL_BASE: f64 = 10_000.0;

/// Architecture and regularisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// History length `T_s`.
    pub seq_len: usize,
    /// Forecast horizon `T_p`.
    pub pred_len: usize,
    /// Number of input variables `C`.
    pub channels: usize,
    /// Embedding width `D`.
    pub d_model: usize,
    /// Number of stacked blocks.
    pub layers: usize,
    /// Periods folded per block.
    pub top_k: usize,
    /// Exponent `n` on the periodicity weight.
    pub exponent: u32,
    /// Spectral bins `m` used for the periodicity weight.
    pub pwc_bins: usize,
    pub omega0: f64,
    pub dropout: f64,
    pub mode: BranchMode,
}

impl ModelConfig {
    /// Defaults for the given window shape: `D = 32`, two blocks, `k = 3`,
    /// `n = 1`, `m = min(32, T_s / 2)`.
    pub fn new(seq_len: usize, pred_len: usize, channels: usize) -> Self {
        Self {
            seq_len,
            pred_len,
            channels,
            d_model: 32,
            layers: 2,
            top_k: 3,
            exponent: 1,
            pwc_bins: (seq_len / 2).min(32),
            omega0: DEFAULT_OMEGA0,
            dropout: 0.1,
            mode: BranchMode::Fused,
        }
    }

    /// Encoder length `T_e = T_s + T_p`.
    pub fn encoder_len(&self) -> usize {
        self.seq_len + self.pred_len
    }

    pub fn scales(&self) -> Result<ScaleSet> {
        default_scales(self.encoder_len(), self.omega0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("pred_len", self.pred_len),
            ("channels", self.channels),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("top_k", self.top_k),
            ("exponent", self.exponent as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(WftError::config(format!("{name} must be positive")));
        }
        if self.seq_len < 4 {
            return Err(WftError::config("seq_len must be at least 4"));
        }
        let t_e = self.encoder_len();
        if t_e < 8 {
            return Err(WftError::config(format!(
                "seq_len + pred_len must be at least 8, got {t_e}"
            )));
        }
        if self.top_k > t_e / 2 {
            return Err(WftError::config(format!(
                "top_k = {} exceeds (seq_len + pred_len) / 2 = {}",
                self.top_k,
                t_e / 2
            )));
        }
        if self.pwc_bins < 2 || self.pwc_bins > self.seq_len / 2 {
            return Err(WftError::config(format!(
                "pwc_bins must lie in 2..={}, got {}",
                self.seq_len / 2,
                self.pwc_bins
            )));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(WftError::config("omega0 must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(WftError::config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    fn block_config(&self) -> BlockConfig {
        BlockConfig {
            top_k: self.top_k,
            exponent: self.exponent,
            mode: self.mode,
        }
    }
}

/// Per-channel location and scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics of the rows of `[N, C]` data, std floored.
    pub fn of(x: &Tensor) -> Self {
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let mut mean = vec![0.0; cols];
        for r in x.data().chunks(cols) {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; cols];
        for r in x.data().chunks(cols) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / rows as f64).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let cols = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % cols]) / self.std[i % cols];
        }
        out
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        let cols = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % cols] + self.mean[i % cols];
        }
        out
    }
}

/// Rejects non-finite cells, reporting 1-based positions.
pub fn check_finite(x: &Tensor) -> Result<()> {
    let cols = x.shape().get(1).copied().unwrap_or(1);
    if let Some(i) = x.data().iter().position(|v| !v.is_finite()) {
        return Err(WftError::Data {
            row: i / cols + 1,
            col: i % cols + 1,
            message: format!("non-finite value {}", x.data()[i]),
        });
    }
    Ok(())
}

/// Per-window, per-channel z-scoring.
pub fn normalize(x: &Tensor) -> Result<(Tensor, NormStats)> {
    if x.rank() != 2 || x.shape()[0] < 2 {
        return Err(WftError::dim(format!(
            "normalize expects [T_s >= 2, C], got {:?}",
            x.shape()
        )));
    }
    check_finite(x)?;
    let stats = NormStats::of(x);
    Ok((stats.apply(x), stats))
}

pub fn denormalize(x: &Tensor, stats: &NormStats) -> Tensor {
    stats.invert(x)
}

/// Fixed sinusoidal table `[rows, d]`.
pub fn positional_table(rows: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; rows * d];
    for pos in 0..rows {
        for i in 0..d {
            let pair = (i / 2) as f64 * 2.0;
            let angle = pos as f64 / POSITIONAL_BASE.powf(pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[rows, d], data).expect("positional table shape")
}

/// All learnable tensors of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `[C, D]`.
    pub value_weight: Tensor,
    pub value_bias: Tensor,
    /// `[T_s, T_e]`, applied along the time axis.
    pub temporal_weight: Tensor,
    pub temporal_bias: Tensor,
    pub blocks: Vec<WftBlockParams>,
    /// `[D, C]`.
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let (c, d, ts, te) = (cfg.channels, cfg.d_model, cfg.seq_len, cfg.encoder_len());
        let n_scales = cfg.scales()?.len();
        Ok(Self {
            value_weight: init_params(&[c, d], c, rng)?,
            value_bias: init_params(&[d], c, rng)?,
            temporal_weight: init_params(&[ts, te], ts, rng)?,
            temporal_bias: init_params(&[te], ts, rng)?,
            blocks: (0..cfg.layers)
                .map(|_| WftBlockParams::init(d, n_scales, rng))
                .collect::<Result<_>>()?,
            head_weight: init_params(&[d, c], d, rng)?,
            head_bias: init_params(&[c], d, rng)?,
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let (c, d, ts, te) = (cfg.channels, cfg.d_model, cfg.seq_len, cfg.encoder_len());
        let n_scales = cfg.scales()?.len();
        let z = |s: &[usize]| Tensor::zeros(s).with_grad();
        Ok(Self {
            value_weight: z(&[c, d]),
            value_bias: z(&[d]),
            temporal_weight: z(&[ts, te]),
            temporal_bias: z(&[te]),
            blocks: (0..cfg.layers)
                .map(|_| WftBlockParams::zeros(d, n_scales))
                .collect(),
            head_weight: z(&[d, c]),
            head_bias: z(&[c]),
        })
    }

    /// Every tensor with its canonical name, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embed.value.weight".to_string(), &self.value_weight),
            ("embed.value.bias".to_string(), &self.value_bias),
            ("embed.temporal.weight".to_string(), &self.temporal_weight),
            ("embed.temporal.bias".to_string(), &self.temporal_bias),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("blocks.{l}")));
        }
        out.push(("head.weight".to_string(), &self.head_weight));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    /// Mutable tensors in the same order as [`named`](Self::named).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.value_weight,
            &mut self.value_bias,
            &mut self.temporal_weight,
            &mut self.temporal_bias,
        ];
        for b in &mut self.blocks {
            out.extend(b.named_mut());
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds every tensor to `g` as a leaf, returning typed handles and the
    /// same handles in [`ModelParams::named`] order.
    pub fn register(&self, g: &mut Graph) -> (ModelVars, Vec<Var>) {
        let mut order = Vec::new();
        let leaf = |g: &mut Graph, t: &Tensor, order: &mut Vec<Var>| {
            let v = g.leaf(t);
            order.push(v);
            v
        };
        let value_weight = leaf(g, &self.value_weight, &mut order);
        let value_bias = leaf(g, &self.value_bias, &mut order);
        let temporal_weight = leaf(g, &self.temporal_weight, &mut order);
        let temporal_bias = leaf(g, &self.temporal_bias, &mut order);
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.register(g, &mut order))
            .collect();
        let head_weight = leaf(g, &self.head_weight, &mut order);
        let head_bias = leaf(g, &self.head_bias, &mut order);
        (
            ModelVars {
                value_weight,
                value_bias,
                temporal_weight,
                temporal_bias,
                blocks,
                head_weight,
                head_bias,
            },
            order,
        )
    }
}

/// Graph handles mirroring [`ModelParams`].
pub struct ModelVars {
    pub value_weight: Var,
    pub value_bias: Var,
    pub temporal_weight: Var,
    pub temporal_bias: Var,
    pub blocks: Vec<BlockVars>,
    pub head_weight: Var,
    pub head_bias: Var,
}

/// A recorded forward pass.
pub struct ForwardPass {
    pub graph: Graph,
    /// Forecast `[T_p, C]` in the input's units.
    pub output: Var,
    /// Parameter leaves in [`ModelParams::named`] order.
    pub params: Vec<Var>,
    pub alpha: f64,
}

/// Loss value and per-parameter gradients of one sample.
pub struct SampleGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct WftNet {
    config: ModelConfig,
    pub params: ModelParams,
    plan: Arc<CwtPlan>,
    positional: Tensor,
}

impl WftNet {
    pub fn new(config: ModelConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng)?;
        Self::from_parts(config, params)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::zeros(&config)?;
        Self::from_parts(config, params)
    }

    /// Assembles a model, checking every parameter shape against `config`.
    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::zeros(&config)?;
        let want = expected.named();
        let got = params.named();
        if want.len() != got.len() {
            return Err(WftError::Validation(format!(
                "configuration implies {} parameter tensors, found {}",
                want.len(),
                got.len()
            )));
        }
        for ((name, w), (_, g)) in want.iter().zip(&got) {
            if w.shape() != g.shape() {
                return Err(WftError::Validation(format!(
                    "parameter {name}: configuration implies shape {:?}, found {:?}",
                    w.shape(),
                    g.shape()
                )));
            }
        }
        let plan = Arc::new(CwtPlan::new(config.encoder_len(), &config.scales()?)?);
        let positional = positional_table(config.encoder_len(), config.d_model);
        Ok(Self {
            config,
            params,
            plan,
            positional,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Switches the branch mode; parameters are shared across modes.
    pub fn set_mode(&mut self, mode: BranchMode) {
        self.config.mode = mode;
    }

    pub fn plan(&self) -> &Arc<CwtPlan> {
        &self.plan
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [self.config.seq_len, self.config.channels];
        if x.shape() != want {
            return Err(WftError::dim(format!(
                "model expects input {want:?}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Periodicity weight of a raw input window.
    pub fn alpha(&self, x_in: &Tensor) -> Result<f64> {
        self.check_input(x_in)?;
        let (norm, _) = normalize(x_in)?;
        pwc(&norm, self.config.pwc_bins)
    }

    /// Value embedding, positional encoding, time-axis projection to `T_e`
    /// rows, then dropout.
    pub fn embed(
        &self,
        g: &mut Graph,
        x_norm: Var,
        vars: &ModelVars,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        let cfg = &self.config;
        let values = g.linear(x_norm, vars.value_weight, vars.value_bias)?;
        let pos = &self.positional.data()[..cfg.seq_len * cfg.d_model];
        let values = g.add_const(values, pos)?;
        let by_channel = g.transpose(values)?;
        let projected = g.linear(by_channel, vars.temporal_weight, vars.temporal_bias)?;
        let enc = g.transpose(projected)?;
        g.dropout(enc, cfg.dropout, rng, training)
    }

    /// Records a full forward pass on a fresh graph.
    pub fn forward_pass(
        &self,
        x_in: &Tensor,
        rng: &mut RngState,
        training: bool,
    ) -> Result<ForwardPass> {
        self.check_input(x_in)?;
        let cfg = &self.config;
        let (x_norm, stats) = normalize(x_in)?;
        let alpha = pwc(&x_norm, cfg.pwc_bins)?;

        let mut g = Graph::new();
        let (vars, params) = self.params.register(&mut g);
        let xv = g.constant(&x_norm);
        let mut h = self.embed(&mut g, xv, &vars, rng, training)?;
        let block_cfg = cfg.block_config();
        for b in &vars.blocks {
            h = wftblock_forward(&mut g, h, b, &block_cfg, &self.plan, alpha)?;
        }
        let y = g.linear(h, vars.head_weight, vars.head_bias)?;
        let t_e = cfg.encoder_len();
        let y = g.slice_rows(y, t_e - cfg.pred_len, t_e)?;
        let output = g.channel_affine(y, &stats.std, &stats.mean)?;
        Ok(ForwardPass {
            graph: g,
            output,
            params,
            alpha,
        })
    }

    /// Forecast `[T_p, C]` for an input window `[T_s, C]`.
    pub fn forward(&self, x_in: &Tensor, rng: &mut RngState, training: bool) -> Result<Tensor> {
        let pass = self.forward_pass(x_in, rng, training)?;
        Ok(pass.graph.tensor(pass.output))
    }

    /// Deterministic evaluation-mode forecast.
    pub fn predict(&self, x_in: &Tensor) -> Result<Tensor> {
        self.forward(x_in, &mut RngState::new(0), false)
    }

    /// MSE of one window against its target, with gradients for every
    /// parameter tensor.
    pub fn sample_grad(
        &self,
        x_in: &Tensor,
        target: &Tensor,
        rng: &mut RngState,
        training: bool,
    ) -> Result<SampleGrad> {
        let want = [self.config.pred_len, self.config.channels];
        if target.shape() != want {
            return Err(WftError::dim(format!(
                "target must be {want:?}, got {:?}",
                target.shape()
            )));
        }
        let ForwardPass {
            mut graph,
            output,
            params,
            alpha,
        } = self.forward_pass(x_in, rng, training)?;
        let loss = graph.mse(output, target.data())?;
        let value = graph.value(loss)[0];
        let grads = graph.backward(loss)?;
        let lens: Vec<usize> = self.params.named().iter().map(|(_, t)| t.len()).collect();
        let grads = params
            .iter()
            .zip(lens)
            .map(|(&v, n)| grads.get_or_zeros(v, n))
            .collect();
        Ok(SampleGrad {
            loss: value,
            grads,
            alpha,
        })
    }
}
