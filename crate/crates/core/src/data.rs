//! CSV ingestion, chronological splits, sliding windows and error metrics.

use std::ops::Range;
use std::path::Path;

use crate::error::{Result, WftError};
use crate::model::NormStats;
use crate::tensor::Tensor;

/// A multivariate series loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub timestamps: Option<Vec<String>>,
    /// `[N, C]`.
    pub values: Tensor,
    pub channel_names: Vec<String>,
}

impl SeriesTable {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Reads a headed CSV. A first column named `date` (any case) is kept as
/// timestamps; every other column must parse as a real number.
///
/// Error positions are 1-based: `row` counts data records after the header,
/// `col` counts file columns.
pub fn load_csv(path: &Path) -> Result<SeriesTable> {
    let file = std::fs::File::open(path).map_err(|e| WftError::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<SeriesTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| WftError::Format(format!("cannot read header row: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(WftError::Format("empty header row".into()));
    }
    let has_date = headers
        .get(0)
        .is_some_and(|h| h.eq_ignore_ascii_case("date"));
    let first_value = usize::from(has_date);
    let channel_names: Vec<String> = headers.iter().skip(first_value).map(str::to_string).collect();
    if channel_names.is_empty() {
        return Err(WftError::Format("no value columns".into()));
    }
    let mut stamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => WftError::Format(format!(
                "row {row} has {len} fields, header has {expected_len}"
            )),
            _ => WftError::Format(format!("row {row}: {e}")),
        })?;
        if has_date {
            stamps.push(rec.get(0).unwrap_or_default().to_string());
        }
        for (j, cell) in rec.iter().enumerate().skip(first_value) {
            let v: f64 = cell.parse().map_err(|_| WftError::Data {
                row,
                col: j + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(WftError::Data {
                    row,
                    col: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    let n = values.len() / channel_names.len();
    if n == 0 {
        return Err(WftError::Format("no data rows".into()));
    }
    Ok(SeriesTable {
        timestamps: has_date.then_some(stamps),
        values: Tensor::new(&[n, channel_names.len()], values)?,
        channel_names,
    })
}

/// Chronological train / validation / test proportions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train_frac, self.val_frac, self.test_frac];
        if parts.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(WftError::config("split fractions must be positive"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(WftError::config("split fractions must sum to 1"));
        }
        Ok(())
    }
}

/// Row ranges of the three splits, in time order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn by_name(&self, name: &str) -> Result<Range<usize>> {
        match name {
            "train" => Ok(self.train.clone()),
            "val" => Ok(self.val.clone()),
            "test" => Ok(self.test.clone()),
            other => Err(WftError::config(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// Boundaries at `floor(train * N)` and `floor((train + val) * N)`; each
/// split must hold at least one window of `window_len` rows.
pub fn split(n_rows: usize, spec: &SplitSpec, window_len: usize) -> Result<Splits> {
    spec.validate()?;
    let bound = |f: f64| ((f * n_rows as f64) + 1e-9).floor() as usize;
    let a = bound(spec.train_frac);
    let b = bound(spec.train_frac + spec.val_frac).min(n_rows);
    let splits = Splits {
        train: 0..a,
        val: a..b,
        test: b..n_rows,
    };
    for (name, r) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        if r.len() < window_len {
            return Err(WftError::config(format!(
                "{name} split has {} rows, fewer than one window of {window_len}",
                r.len()
            )));
        }
    }
    Ok(splits)
}

/// Z-scores every row with statistics taken from `train` rows only.
pub fn standardize(table: &SeriesTable, train: Range<usize>) -> Result<(SeriesTable, NormStats)> {
    if train.is_empty() {
        return Err(WftError::config("empty training range"));
    }
    let stats = NormStats::of(&table.values.rows(train.start, train.end)?);
    let mut out = table.clone();
    out.values = stats.apply(&table.values);
    Ok((out, stats))
}

/// Standardised windows for the three splits of `table`.
pub struct Prepared {
    pub table: SeriesTable,
    pub stats: NormStats,
    pub splits: Splits,
}

pub fn prepare(table: &SeriesTable, spec: &SplitSpec, seq_len: usize, pred_len: usize) -> Result<Prepared> {
    let splits = split(table.rows(), spec, seq_len + pred_len)?;
    let (std_table, stats) = standardize(table, splits.train.clone())?;
    Ok(Prepared {
        table: std_table,
        stats,
        splits,
    })
}

/// One supervised example: `seq_len` history rows and the next `pred_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub input: Tensor,
    pub target: Tensor,
}

/// Stride-1 windows lying wholly inside a row range.
#[derive(Clone, Debug)]
pub struct WindowSampler {
    pub range: Range<usize>,
    pub seq_len: usize,
    pub pred_len: usize,
    pub stride: usize,
}

impl WindowSampler {
    pub fn new(range: Range<usize>, seq_len: usize, pred_len: usize) -> Self {
        Self {
            range,
            seq_len,
            pred_len,
            stride: 1,
        }
    }

    pub fn window_len(&self) -> usize {
        self.seq_len + self.pred_len
    }

    pub fn starts(&self) -> Vec<usize> {
        let w = self.window_len();
        if self.range.len() < w {
            return Vec::new();
        }
        (self.range.start..=self.range.end - w)
            .step_by(self.stride.max(1))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.starts().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self, values: &Tensor, start: usize) -> Result<Window> {
        let mid = start + self.seq_len;
        Ok(Window {
            start,
            input: values.rows(start, mid)?,
            target: values.rows(mid, mid + self.pred_len)?,
        })
    }

    pub fn windows(&self, values: &Tensor) -> Result<Vec<Window>> {
        self.starts()
            .into_iter()
            .map(|s| self.window(values, s))
            .collect()
    }
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(WftError::dim(format!(
            "metric inputs have {} and {} elements",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Forecast repeating the last observed row.
pub fn persistence_forecast(input: &Tensor, pred_len: usize) -> Tensor {
    let rows = input.shape()[0];
    let last = input.rows(rows - 1, rows).expect("non-empty window");
    let data = last.data().repeat(pred_len);
    Tensor::new(&[pred_len, input.shape()[1]], data).expect("forecast shape")
}
