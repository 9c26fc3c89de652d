//! Adam optimisation and the epoch loop with early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{mae, mse, prepare, SeriesTable, SplitSpec, Window, WindowSampler};
use crate::error::{Result, WftError};
use crate::model::{ModelConfig, ModelParams, NormStats, WftNet};
use crate::tensor::{RngState, Tensor};

const SHUFFLE_STREAM: u64 = 1 << 62;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lens: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &ModelParams, lr: f64) -> Self {
        let lens: Vec<usize> = params.named().iter().map(|(_, t)| t.len()).collect();
        Self::new(&lens, lr)
    }

    pub fn moments(&self, slot: usize) -> (&[f64], &[f64]) {
        (&self.m[slot], &self.v[slot])
    }

    /// Applies one update to every tensor. Gradients are checked for
    /// finiteness before anything is written.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(WftError::dim(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map_or("?", String::as_str);
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(WftError::dim(format!(
                    "parameter {name}: {} values, gradient has {}",
                    p.len(),
                    g.len()
                )));
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(WftError::Training(format!(
                    "non-finite gradient {bad} in parameter {name}"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut tensors = params.tensors_mut();
    state.update(&mut tensors, grads, &names)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Caps the number of shuffled training windows visited per epoch.
    #[serde(default)]
    pub max_windows_per_epoch: Option<usize>,
    /// Stops after this many optimizer steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 30,
            patience: 3,
            seed: 0,
            max_windows_per_epoch: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(WftError::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(WftError::config(
                "batch_size, epochs and patience must be at least 1",
            ));
        }
        if self.max_windows_per_epoch == Some(0) || self.max_steps == Some(0) {
            return Err(WftError::config(
                "max_windows_per_epoch and max_steps must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub alpha_mean: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

pub const LOG_HEADER: &str = "epoch,train_mse,val_mse,val_mae,alpha_mean";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_mse, r.val_mse, r.val_mae, r.alpha_mean
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MSE.
    pub model: WftNet,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub steps: usize,
    pub stopped_early: bool,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub mse: f64,
    pub mae: f64,
    pub predictions: Vec<Tensor>,
}

/// Deterministic eval-mode forecasts and pooled metrics over `windows`.
pub fn evaluate(model: &WftNet, windows: &[Window]) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(WftError::config("no windows to evaluate"));
    }
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let mut predictions = Vec::with_capacity(windows.len());
    for w in windows {
        let p = model.predict(&w.input)?;
        pred.extend_from_slice(p.data());
        target.extend_from_slice(w.target.data());
        predictions.push(p);
    }
    Ok(Evaluation {
        mse: mse(&pred, &target)?,
        mae: mae(&pred, &target)?,
        predictions,
    })
}

/// Pooled metrics of the repeat-last-value forecast.
pub fn persistence_metrics(windows: &[Window]) -> Result<(f64, f64)> {
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for w in windows {
        let f = crate::data::persistence_forecast(&w.input, w.target.shape()[0]);
        pred.extend_from_slice(f.data());
        target.extend_from_slice(w.target.data());
    }
    Ok((mse(&pred, &target)?, mae(&pred, &target)?))
}

/// Minibatch Adam on `train` windows, validating on `val` after each epoch.
pub fn train(model: WftNet, train: &[Window], val: &[Window], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(WftError::config("training and validation sets must be non-empty"));
    }
    let mut model = model;
    let mut state = AdamState::for_params(&model.params, cfg.lr);
    let base = RngState::new(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let per_epoch = cfg.max_windows_per_epoch.map_or(train.len(), |m| m.min(train.len()));
    let lens: Vec<usize> = model.params.named().iter().map(|(_, t)| t.len()).collect();

    let mut log = Vec::new();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut steps = 0;
    let mut sample_no = 0u64;
    let mut stopped_early = false;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut shuffler = base.fork(SHUFFLE_STREAM + epoch as u64);
        order.sort_unstable();
        order.shuffle(shuffler.inner());

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut alphas = Vec::new();
        let mut out_of_steps = false;
        for batch in order[..per_epoch].chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = lens.iter().map(|&n| vec![0.0; n]).collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                sample_no += 1;
                let mut rng = base.fork(sample_no);
                let w = &train[i];
                let sg = model.sample_grad(&w.input, &w.target, &mut rng, true)?;
                if !sg.loss.is_finite() {
                    return Err(WftError::Training(format!(
                        "divergence: non-finite loss at epoch {epoch}, step {}",
                        steps + 1
                    )));
                }
                loss_sum += sg.loss;
                seen += 1;
                alphas.push(sg.alpha);
                for (a, g) in acc.iter_mut().zip(&sg.grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += scale * y;
                    }
                }
            }
            adam_step(&mut model.params, &acc, &mut state)?;
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                out_of_steps = true;
                break;
            }
        }

        let eval = evaluate(&model, val)?;
        if !eval.mse.is_finite() {
            return Err(WftError::Training(format!(
                "divergence: non-finite validation loss at epoch {epoch}"
            )));
        }
        log.push(EpochLog {
            epoch,
            train_mse: loss_sum / seen as f64,
            val_mse: eval.mse,
            val_mae: eval.mae,
            alpha_mean: alphas.iter().sum::<f64>() / alphas.len() as f64,
            alpha_min: alphas.iter().copied().fold(f64::INFINITY, f64::min),
            alpha_max: alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        if eval.mse < best_val {
            best_val = eval.mse;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break 'epochs;
            }
        }
        if out_of_steps {
            break;
        }
    }

    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
        best_val_mse: best_val,
        steps,
        stopped_early,
    })
}

/// Result of training and scoring one configuration on one table.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub outcome: TrainOutcome,
    pub stats: NormStats,
    /// Standardised-scale metrics on the test split.
    pub test: Evaluation,
    pub persistence_mse: f64,
}

/// Splits and standardises `table`, trains a fresh model seeded with
/// `tc.seed`, then scores it and the persistence forecast on the test split.
pub fn run_experiment(
    table: &SeriesTable,
    model_cfg: ModelConfig,
    tc: &TrainConfig,
    spec: &SplitSpec,
) -> Result<Experiment> {
    let (seq, pred) = (model_cfg.seq_len, model_cfg.pred_len);
    let prep = prepare(table, spec, seq, pred)?;
    let windows = |r| WindowSampler::new(r, seq, pred).windows(&prep.table.values);
    let train_w = windows(prep.splits.train.clone())?;
    let val_w = windows(prep.splits.val.clone())?;
    let test_w = windows(prep.splits.test.clone())?;
    let model = WftNet::new(model_cfg, &mut RngState::new(tc.seed))?;
    let outcome = train(model, &train_w, &val_w, tc)?;
    let test = evaluate(&outcome.model, &test_w)?;
    let (persistence_mse, _) = persistence_metrics(&test_w)?;
    Ok(Experiment {
        outcome,
        stats: prep.stats,
        test,
        persistence_mse,
    })
}
