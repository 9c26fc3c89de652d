//! Command-line front end: `train`, `evaluate`, `forecast` and `analyze`.
//!
//! Every command reads a JSON run configuration. Keys left out of the file
//! take their defaults; flags given on the command line win over both.
//! Relative paths inside the file resolve against the file's directory.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and data errors,
//! 3 for runtime failures such as divergence. Failures print one line to
//! stderr: `error kind=<kind> message=<text>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint};
use crate::data::{load_csv, prepare, split, SeriesTable, SplitSpec, WindowSampler};
use crate::error::{Result, WftError};
use crate::model::{normalize, ModelConfig, NormStats, WftNet};
use crate::spectral::{
    amplitude_spectrum, cwt, default_scales, pwc_report, topk_periods, AmplitudeSpectrum,
    PeriodSet, DEFAULT_OMEGA0,
};
use crate::tensor::{RngState, Tensor};
use crate::train::{evaluate, log_csv, train, TrainConfig};
use crate::wftblock::BranchMode;

pub const CHECKPOINT_FILE: &str = "checkpoint.wft";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const SCALOGRAM_FILE: &str = "scalogram.csv";

/// Windows sampled for `analyze`.
const ANALYZE_WINDOWS: usize = 64;

/// Contents of the JSON configuration file. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<BranchMode>,
    pub seq_len: Option<usize>,
    pub pred_len: Option<usize>,
    pub d_model: Option<usize>,
    pub layers: Option<usize>,
    pub top_k: Option<usize>,
    pub exponent: Option<u32>,
    pub pwc_bins: Option<usize>,
    pub omega0: Option<f64>,
    pub dropout: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub max_windows_per_epoch: Option<usize>,
    pub max_steps: Option<usize>,
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub test_frac: Option<f64>,
}

const DEFAULT_SEQ_LEN: usize = 96;
const DEFAULT_PRED_LEN: usize = 96;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| WftError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| WftError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.mode.is_some() {
            self.mode = o.mode;
        }
        if o.seq_len.is_some() {
            self.seq_len = o.seq_len;
        }
        if o.pred_len.is_some() {
            self.pred_len = o.pred_len;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.data.is_some() {
            self.data = o.data.clone();
        }
    }

    /// Model settings for `channels` inputs, defaults filled in.
    pub fn model_config(&self, channels: usize) -> ModelConfig {
        let seq_len = self.seq_len.unwrap_or(DEFAULT_SEQ_LEN);
        let base = ModelConfig::new(seq_len, self.pred_len.unwrap_or(DEFAULT_PRED_LEN), channels);
        ModelConfig {
            d_model: self.d_model.unwrap_or(base.d_model),
            layers: self.layers.unwrap_or(base.layers),
            top_k: self.top_k.unwrap_or(base.top_k),
            exponent: self.exponent.unwrap_or(base.exponent),
            pwc_bins: self.pwc_bins.unwrap_or(base.pwc_bins),
            omega0: self.omega0.unwrap_or(base.omega0),
            dropout: self.dropout.unwrap_or(base.dropout),
            mode: self.mode.unwrap_or(base.mode),
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            patience: self.patience.unwrap_or(d.patience),
            seed: self.seed.unwrap_or(d.seed),
            max_windows_per_epoch: self.max_windows_per_epoch,
            max_steps: self.max_steps,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        let d = SplitSpec::default();
        SplitSpec {
            train_frac: self.train_frac.unwrap_or(d.train_frac),
            val_frac: self.val_frac.unwrap_or(d.val_frac),
            test_frac: self.test_frac.unwrap_or(d.test_frac),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| WftError::config("no data path: set `data` in the config or pass --data"))
    }

    /// Checks every setting that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.model_config(1).validate()?;
        self.train_config().validate()?;
        self.split_spec().validate()?;
        self.data_path()?;
        Ok(())
    }

    /// Rejects explicitly set architecture keys that disagree with `stored`.
    pub fn check_against(&self, stored: &ModelConfig) -> Result<()> {
        let mut clashes = Vec::new();
        let mut check = |name: &str, given: Option<String>, have: String| {
            if let Some(g) = given {
                if g != have {
                    clashes.push(format!("{name}={g} (checkpoint has {have})"));
                }
            }
        };
        check("seq_len", self.seq_len.map(|v| v.to_string()), stored.seq_len.to_string());
        check("pred_len", self.pred_len.map(|v| v.to_string()), stored.pred_len.to_string());
        check("d_model", self.d_model.map(|v| v.to_string()), stored.d_model.to_string());
        check("layers", self.layers.map(|v| v.to_string()), stored.layers.to_string());
        check("top_k", self.top_k.map(|v| v.to_string()), stored.top_k.to_string());
        check("exponent", self.exponent.map(|v| v.to_string()), stored.exponent.to_string());
        check("pwc_bins", self.pwc_bins.map(|v| v.to_string()), stored.pwc_bins.to_string());
        check("omega0", self.omega0.map(|v| v.to_string()), stored.omega0.to_string());
        if clashes.is_empty() {
            Ok(())
        } else {
            Err(WftError::config(format!(
                "configuration conflicts with checkpoint: {}",
                clashes.join(", ")
            )))
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wftnet", version, about = "Wavelet-Fourier forecasting network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write a checkpoint plus a per-epoch metric log.
    Train {
        #[command(flatten)]
        common: Overrides,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split and write its predictions.
    Evaluate {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Forecast the rows that follow a given position.
    Forecast {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// First forecast row; the `seq_len` rows before it are the history.
        #[arg(long)]
        at: usize,
    },
    /// Report dominant periods and the periodicity weight of a dataset.
    Analyze {
        #[command(flatten)]
        common: Overrides,
    },
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<BranchMode>,
    #[arg(long)]
    pub pred_len: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(self);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit status for an error.
pub fn exit_code(err: &WftError) -> i32 {
    match err {
        WftError::Training(_) | WftError::Contract(_) => 3,
        _ => 2,
    }
}

/// Single-line diagnostic for an error.
pub fn diagnostic(err: &WftError) -> String {
    let msg = err.to_string().replace(['\n', '\r'], " ");
    format!("error kind={} message={msg}", err.kind())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                let line = e.to_string();
                let first = line.lines().next().unwrap_or("usage error");
                let _ = writeln!(stderr, "error kind=usage message={first}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", diagnostic(&e));
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train { common, resume } => cmd_train(&common.resolve()?, resume.as_deref(), out),
        Command::Evaluate {
            common,
            checkpoint,
            split,
        } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir().join(CHECKPOINT_FILE));
            cmd_evaluate(&cfg, &ckpt, &split, out)
        }
        Command::Forecast {
            common,
            checkpoint,
            at,
        } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir().join(CHECKPOINT_FILE));
            cmd_forecast(&cfg, &ckpt, at, out)
        }
        Command::Analyze { common } => cmd_analyze(&common.resolve()?, out),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| WftError::io(dir, e))
}

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| WftError::io("<stdout>", e))
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let resumed = resume.map(load_checkpoint).transpose()?;
    if let Some(ck) = &resumed {
        cfg.check_against(ck.model.config())?;
    }
    let table = load_csv(cfg.data_path()?)?;
    let tc = cfg.train_config();
    let model = match resumed {
        Some(ck) => {
            let stored = ck.model.config();
            if stored.channels != table.channels() {
                return Err(WftError::config(format!(
                    "checkpoint expects {} channels, data has {}",
                    stored.channels,
                    table.channels()
                )));
            }
            let mut m = ck.model;
            if let Some(mode) = cfg.mode {
                m.set_mode(mode);
            }
            m
        }
        None => {
            let mc = cfg.model_config(table.channels());
            mc.validate()?;
            WftNet::new(mc, &mut RngState::new(tc.seed))?
        }
    };
    let mc = model.config().clone();
    let prep = prepare(&table, &cfg.split_spec(), mc.seq_len, mc.pred_len)?;
    let windows = |r| WindowSampler::new(r, mc.seq_len, mc.pred_len).windows(&prep.table.values);
    let train_w = windows(prep.splits.train.clone())?;
    let val_w = windows(prep.splits.val.clone())?;
    let outcome = train(model, &train_w, &val_w, &tc)?;

    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    save_checkpoint(&outcome.model, Some(&prep.stats), &dir.join(CHECKPOINT_FILE))?;
    write_atomic(&dir.join(METRICS_FILE), log_csv(&outcome.log).as_bytes())?;
    emit(
        out,
        format!(
            "epochs={} best_epoch={} best_val_mse={:.6} steps={} early_stop={}",
            outcome.log.len(),
            outcome.best_epoch,
            outcome.best_val_mse,
            outcome.steps,
            outcome.stopped_early
        ),
    )?;
    emit(out, format!("checkpoint={}", dir.join(CHECKPOINT_FILE).display()))
}

fn load_for(cfg: &RunConfig, ckpt: &Path) -> Result<(Checkpoint, SeriesTable, NormStats)> {
    let ck = load_checkpoint(ckpt)?;
    cfg.check_against(ck.model.config())?;
    let table = load_csv(cfg.data_path()?)?;
    let mc = ck.model.config();
    if mc.channels != table.channels() {
        return Err(WftError::config(format!(
            "checkpoint expects {} channels, data has {}",
            mc.channels,
            table.channels()
        )));
    }
    let stats = match &ck.standardization {
        Some(s) => s.clone(),
        None => {
            let splits = split(table.rows(), &cfg.split_spec(), mc.encoder_len())?;
            NormStats::of(&table.values.rows(splits.train.start, splits.train.end)?)
        }
    };
    Ok((ck, table, stats))
}

pub fn cmd_evaluate(cfg: &RunConfig, ckpt: &Path, split_name: &str, out: &mut dyn Write) -> Result<()> {
    let (ck, table, stats) = load_for(cfg, ckpt)?;
    let mut model = ck.model;
    if let Some(mode) = cfg.mode {
        model.set_mode(mode);
    }
    let mc = model.config().clone();
    let splits = split(table.rows(), &cfg.split_spec(), mc.encoder_len())?;
    let range = splits.by_name(split_name)?;
    let values = stats.apply(&table.values);
    let windows = WindowSampler::new(range, mc.seq_len, mc.pred_len).windows(&values)?;
    let eval = evaluate(&model, &windows)?;

    let mut raw_pred = Vec::new();
    let mut raw_target = Vec::new();
    let mut csv = String::from("window_index,step,channel,prediction,target\n");
    for (wi, (w, p)) in windows.iter().zip(&eval.predictions).enumerate() {
        raw_pred.extend_from_slice(stats.invert(p).data());
        raw_target.extend_from_slice(stats.invert(&w.target).data());
        for (i, (pv, tv)) in p.data().iter().zip(w.target.data()).enumerate() {
            let (step, ch) = (i / mc.channels, i % mc.channels);
            csv.push_str(&format!("{wi},{step},{ch},{pv},{tv}\n"));
        }
    }
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    write_atomic(&dir.join(PREDICTIONS_FILE), csv.as_bytes())?;
    emit(
        out,
        format!(
            "split={split_name} windows={} mse={:.6} mae={:.6}",
            windows.len(),
            eval.mse,
            eval.mae
        ),
    )?;
    emit(
        out,
        format!(
            "original_scale mse={:.6} mae={:.6}",
            crate::data::mse(&raw_pred, &raw_target)?,
            crate::data::mae(&raw_pred, &raw_target)?
        ),
    )
}

pub fn cmd_forecast(cfg: &RunConfig, ckpt: &Path, at: usize, out: &mut dyn Write) -> Result<()> {
    let (ck, table, stats) = load_for(cfg, ckpt)?;
    let mc = ck.model.config().clone();
    if at < mc.seq_len || at > table.rows() {
        return Err(WftError::config(format!(
            "--at {at} needs {} history rows within {} rows of data",
            mc.seq_len,
            table.rows()
        )));
    }
    let history = stats.apply(&table.values.rows(at - mc.seq_len, at)?);
    let forecast = stats.invert(&ck.model.predict(&history)?);
    let mut csv = table.channel_names.join(",");
    csv.push('\n');
    for row in forecast.data().chunks(mc.channels) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let path = dir.join(FORECAST_FILE);
    write_atomic(&path, csv.as_bytes())?;
    emit(
        out,
        format!("rows={} channels={} forecast={}", mc.pred_len, mc.channels, path.display()),
    )
}

/// Spectral summary of a dataset over instance-normalised windows.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub windows: usize,
    pub periods: PeriodSet,
    pub alpha_mean: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Some window had a channel without spectral energy.
    pub degenerate: bool,
    /// `(tau, scale, modulus)` of the first window, averaged over channels.
    pub scalogram: Vec<(usize, f64, f64)>,
}

/// Averages amplitude spectra over up to `max_windows` evenly spaced
/// `seq_len` windows, then selects `top_k` periods and summarises the
/// periodicity weight over the same windows.
pub fn analyze_values(
    values: &Tensor,
    seq_len: usize,
    top_k: usize,
    pwc_bins: usize,
    omega0: f64,
    max_windows: usize,
) -> Result<Analysis> {
    let n = values.shape()[0];
    if n < seq_len {
        return Err(WftError::config(format!(
            "series has {n} rows, fewer than seq_len = {seq_len}"
        )));
    }
    let count = (n - seq_len + 1).min(max_windows.max(1));
    let stride = if count > 1 { (n - seq_len) / (count - 1) } else { 1 };
    let mut sum = vec![0.0; seq_len];
    let mut alphas = Vec::with_capacity(count);
    let mut degenerate = false;
    let mut scalogram = Vec::new();
    for w in 0..count {
        let start = w * stride;
        let (xn, _) = normalize(&values.rows(start, start + seq_len)?)?;
        let spec = amplitude_spectrum(&xn)?;
        for (s, a) in sum.iter_mut().zip(&spec.amps) {
            *s += a;
        }
        let report = pwc_report(&xn, pwc_bins)?;
        degenerate |= !report.degenerate_channels.is_empty();
        alphas.push(report.alpha);
        if w == 0 {
            scalogram = channel_mean_scalogram(&xn, omega0)?;
        }
    }
    let mean = AmplitudeSpectrum {
        amps: sum.iter().map(|s| s / count as f64).collect(),
    };
    let periods = topk_periods(&mean, top_k, seq_len)?;
    Ok(Analysis {
        windows: count,
        periods,
        alpha_mean: alphas.iter().sum::<f64>() / count as f64,
        alpha_min: alphas.iter().copied().fold(f64::INFINITY, f64::min),
        alpha_max: alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        degenerate,
        scalogram,
    })
}

fn channel_mean_scalogram(x: &Tensor, omega0: f64) -> Result<Vec<(usize, f64, f64)>> {
    let (t_len, c) = (x.shape()[0], x.shape()[1]);
    let scales = default_scales(t_len, omega0)?;
    let s_len = scales.len();
    let mut acc = vec![0.0; t_len * s_len];
    for ch in 0..c {
        let sg = cwt(&x.column(ch), &scales)?;
        for (a, m) in acc.iter_mut().zip(sg.modulus()) {
            *a += m / c as f64;
        }
    }
    Ok((0..t_len)
        .flat_map(|tau| {
            let acc = &acc;
            let sc = scales.scales();
            (0..s_len).map(move |j| (tau, sc[j], acc[tau * s_len + j]))
        })
        .collect())
}

pub fn cmd_analyze(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let table = load_csv(cfg.data_path()?)?;
    let mc = cfg.model_config(table.channels());
    let report = analyze_values(
        &table.values,
        mc.seq_len,
        mc.top_k,
        mc.pwc_bins,
        cfg.omega0.unwrap_or(DEFAULT_OMEGA0),
        ANALYZE_WINDOWS,
    )?;
    let mut csv = String::from("tau,scale,modulus\n");
    for (tau, s, m) in &report.scalogram {
        csv.push_str(&format!("{tau},{s},{m}\n"));
    }
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    write_atomic(&dir.join(SCALOGRAM_FILE), csv.as_bytes())?;

    emit(out, format!("windows={} seq_len={} pwc_bins={}", report.windows, mc.seq_len, mc.pwc_bins))?;
    for (rank, e) in report.periods.entries.iter().enumerate() {
        emit(
            out,
            format!(
                "period rank={} freq_index={} period={} amplitude={:.6}",
                rank + 1,
                e.freq_index,
                e.period,
                e.amplitude
            ),
        )?;
    }
    emit(
        out,
        format!(
            "alpha mean={:.6} min={:.6} max={:.6}",
            report.alpha_mean, report.alpha_min, report.alpha_max
        ),
    )?;
    if report.periods.warning {
        emit(out, "warning: fewer distinct periods than requested or a flat spectrum")?;
    }
    if report.degenerate {
        emit(out, format!("warning: degenerate input, alpha fallback 1/m = {:.6} used", 1.0 / mc.pwc_bins as f64))?;
    }
    Ok(())
}

/// Entry point of the `wftnet` binary.
pub fn main_from_env() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
