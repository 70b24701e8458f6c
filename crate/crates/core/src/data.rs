//! Dataset ingestion, chronological splits, standardization, sliding windows
//! and forecast metrics.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Multivariate series stored row-major as `[T, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    timestamps: Option<Vec<String>>,
    names: Vec<String>,
    values: Vec<f64>,
}

impl SeriesDataset {
    pub fn new(
        names: Vec<String>,
        values: Vec<f64>,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        let c = names.len();
        if c == 0 {
            return Err(Error::Data("dataset has no variates".into()));
        }
        if !values.len().is_multiple_of(c) {
            return Err(Error::Data(format!(
                "{} values do not fill rows of {c} variates",
                values.len()
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() * c != values.len() {
                return Err(Error::Data(format!(
                    "{} timestamps for {} rows",
                    ts.len(),
                    values.len() / c
                )));
            }
        }
        Ok(SeriesDataset {
            timestamps,
            names,
            values,
        })
    }

    /// Builds a dataset from per-variate columns of equal length.
    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let t = columns.first().map_or(0, Vec::len);
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != t) {
            return Err(Error::Data(
                "columns must be non-empty and of equal length".into(),
            ));
        }
        let mut values = Vec::with_capacity(t * columns.len());
        for row in 0..t {
            values.extend(columns.iter().map(|c| c[row]));
        }
        Self::new(names, values, None)
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.values.len() / self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.channels();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.channels())
            .copied()
            .collect()
    }

    /// Rows `[range.start, range.end)` as a `[len, C]` tensor.
    pub fn slice_tensor(&self, range: Range<usize>) -> Result<Tensor> {
        let c = self.channels();
        Tensor::new(
            &[range.len(), c],
            self.values[range.start * c..range.end * c].to_vec(),
        )
    }

    /// A copy restricted to rows `range`.
    pub fn rows(&self, range: Range<usize>) -> SeriesDataset {
        let c = self.channels();
        SeriesDataset {
            timestamps: self
                .timestamps
                .as_ref()
                .map(|ts| ts[range.clone()].to_vec()),
            names: self.names.clone(),
            values: self.values[range.start * c..range.end * c].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    /// Reject missing or unparseable cells instead of forward-filling them.
    pub strict: bool,
    /// First column holds timestamps and the first row is a header.
    pub date_column: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            strict: true,
            date_column: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Loaded {
    pub dataset: SeriesDataset,
    /// Cells forward-filled in non-strict mode.
    pub filled: usize,
}

pub fn load_csv(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Loaded> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, opts)
}

pub fn read_csv(reader: impl std::io::Read, opts: LoadOptions) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.date_column)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let skip = usize::from(opts.date_column);
    let mut names: Option<Vec<String>> = if opts.date_column {
        let header = rdr.headers()?;
        if header.len() < 2 {
            return Err(Error::Data(
                "header must name a date column and at least one variate".into(),
            ));
        }
        Some(header.iter().skip(1).map(str::to_string).collect())
    } else {
        None
    };
    let mut timestamps = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based line number, counting the header when present
        let line = row + 1 + skip;
        let width = names
            .get_or_insert_with(|| (0..record.len()).map(|i| format!("v{i}")).collect())
            .len();
        if record.len() != width + skip {
            return Err(Error::Data(format!(
                "line {line}: expected {} fields, found {}",
                width + skip,
                record.len()
            )));
        }
        if opts.date_column {
            timestamps.push(record[0].to_string());
        }
        for (col, cell) in record.iter().skip(skip).enumerate() {
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            if parsed.is_none() && opts.strict {
                return Err(Error::Data(format!(
                    "line {line}, column {} (`{}`): cannot parse `{cell}` as a number",
                    col + 1 + skip,
                    names.as_ref().unwrap()[col]
                )));
            }
            cells.push(parsed);
        }
    }
    let Some(names) = names else {
        return Err(Error::Data("empty file".into()));
    };
    if cells.is_empty() {
        return Err(Error::Data("file has no data rows".into()));
    }
    let c = names.len();
    let mut filled = 0;
    let mut values = vec![0.0; cells.len()];
    for col in 0..c {
        let first = cells
            .iter()
            .skip(col)
            .step_by(c)
            .find_map(|v| *v)
            .ok_or_else(|| {
                Error::Data(format!("variate `{}` has no numeric values", names[col]))
            })?;
        let mut last = first;
        for (t, cell) in cells.iter().skip(col).step_by(c).enumerate() {
            match cell {
                Some(v) => last = *v,
                None => filled += 1,
            }
            values[t * c + col] = last;
        }
    }
    if filled > 0 {
        log::warn!("filled {filled} missing cells");
    }
    let ts = opts.date_column.then_some(timestamps);
    Ok(Loaded {
        dataset: SeriesDataset::new(names, values, ts)?,
        filled,
    })
}

/// Writes the standard `date,<names...>` layout.
pub fn write_csv(dataset: &SeriesDataset, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(dataset.names().iter().cloned());
    w.write_record(&header)?;
    for t in 0..dataset.len() {
        let mut rec = vec![match dataset.timestamps() {
            Some(ts) => ts[t].clone(),
            None => t.to_string(),
        }];
        rec.extend(dataset.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitScheme {
    /// 6:2:2
    Ett,
    /// 7:1:2
    #[default]
    Standard,
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitScheme::Ett => "ett",
            SplitScheme::Standard => "standard",
        })
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ett" => Ok(SplitScheme::Ett),
            "standard" => Ok(SplitScheme::Standard),
            other => Err(Error::Argument(format!("unknown split scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitBoundaries {
    pub train_end: usize,
    pub val_end: usize,
    pub total: usize,
}

impl SplitBoundaries {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..self.total,
        }
    }
}

/// Split boundaries at `floor(0.6 T)`/`floor(0.8 T)` (ett) or
/// `floor(0.7 T)`/`floor(0.8 T)` (standard). Every split must hold at least
/// one window of `lookback + horizon` with lookbacks reaching backwards.
pub fn chronological_split(
    t: usize,
    scheme: SplitScheme,
    lookback: usize,
    horizon: usize,
) -> Result<SplitBoundaries> {
    let (train_end, val_end) = match scheme {
        SplitScheme::Ett => (t * 6 / 10, t * 8 / 10),
        SplitScheme::Standard => (t * 7 / 10, t * 8 / 10),
    };
    let b = SplitBoundaries {
        train_end,
        val_end,
        total: t,
    };
    for split in [Split::Train, Split::Val, Split::Test] {
        window_origins(&b, split, lookback, horizon)?;
    }
    Ok(b)
}

/// Forecast origins (index of the first target step) whose targets lie inside
/// `split` and whose lookback starts at or after row 0.
pub fn window_origins(
    b: &SplitBoundaries,
    split: Split,
    lookback: usize,
    horizon: usize,
) -> Result<Range<usize>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config(
            "lookback and horizon must be positive".into(),
        ));
    }
    let r = b.range(split);
    let first = r.start.max(lookback);
    if r.end < horizon || first > r.end - horizon {
        return Err(Error::Config(format!(
            "{split} split [{}, {}) too short for lookback {lookback} + horizon {horizon}",
            r.start, r.end
        )));
    }
    Ok(first..r.end - horizon + 1)
}

/// Per-channel affine standardization fitted on the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Standardizer {
    /// Fits mean and population standard deviation over `rows`. A constant
    /// channel is an error when `strict`, otherwise its std is floored.
    pub fn fit(dataset: &SeriesDataset, rows: Range<usize>, strict: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data(
                "cannot fit standardizer on an empty range".into(),
            ));
        }
        let c = dataset.channels();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; c];
        for t in rows.clone() {
            for (m, v) in mean.iter_mut().zip(dataset.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for t in rows {
            for ((s, v), m) in var.iter_mut().zip(dataset.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(c);
        for (ch, s) in var.iter().enumerate() {
            let sd = (s / n).sqrt();
            if sd < STD_FLOOR {
                if strict {
                    return Err(Error::Data(format!(
                        "variate `{}` is constant over the training split",
                        dataset.names()[ch]
                    )));
                }
                log::warn!(
                    "variate `{}` is constant over the training split; flooring std",
                    dataset.names()[ch]
                );
                std.push(STD_FLOOR);
            } else {
                std.push(sd);
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, dataset: &SeriesDataset) -> SeriesDataset {
        let c = self.mean.len();
        let values = dataset
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        SeriesDataset {
            timestamps: dataset.timestamps.clone(),
            names: dataset.names.clone(),
            values,
        }
    }

    /// Maps a row-major `[.., C]` buffer back to the original scale.
    pub fn invert(&self, values: &mut [f64]) {
        let c = self.mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `[B, L, C]`
    pub inputs: Tensor,
    /// `[B, H, C]`
    pub targets: Tensor,
    pub origins: Vec<usize>,
}

/// Sliding windows over one split of a dataset.
#[derive(Clone, Debug)]
pub struct Windows<'a> {
    dataset: &'a SeriesDataset,
    lookback: usize,
    horizon: usize,
    origins: Vec<usize>,
}

impl<'a> Windows<'a> {
    pub fn new(
        dataset: &'a SeriesDataset,
        bounds: &SplitBoundaries,
        split: Split,
        lookback: usize,
        horizon: usize,
    ) -> Result<Self> {
        let origins = window_origins(bounds, split, lookback, horizon)?.collect();
        Ok(Windows {
            dataset,
            lookback,
            horizon,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    /// Reorders origins with a generator seeded from `seed`.
    pub fn shuffle(&mut self, seed: u64) {
        let mut rng = SplitMix64::seed_from_u64(seed);
        self.origins.shuffle(&mut rng);
    }

    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = WindowBatch> + '_ {
        self.origins
            .chunks(batch_size.max(1))
            .map(|chunk| self.batch(chunk))
    }

    fn batch(&self, origins: &[usize]) -> WindowBatch {
        let c = self.dataset.channels();
        let (l, h) = (self.lookback, self.horizon);
        let mut inputs = Vec::with_capacity(origins.len() * l * c);
        let mut targets = Vec::with_capacity(origins.len() * h * c);
        let vals = self.dataset.values();
        for &o in origins {
            inputs.extend_from_slice(&vals[(o - l) * c..o * c]);
            targets.extend_from_slice(&vals[o * c..(o + h) * c]);
        }
        let b = origins.len();
        WindowBatch {
            inputs: Tensor::new(&[b, l, c], inputs).expect("window shape"),
            targets: Tensor::new(&[b, h, c], targets).expect("window shape"),
            origins: origins.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

/// Streaming MSE/MAE over every predicted element.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    sum_sq: f64,
    sum_abs: f64,
    count: usize,
    windows: usize,
    shape: Option<Vec<usize>>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a `[B, H, C]` block of predictions and targets.
    pub fn push(&mut self, pred: &Tensor, target: &Tensor) -> Result<()> {
        if pred.shape() != target.shape() {
            let ax = (0..pred.rank().min(target.rank()))
                .find(|&i| pred.shape()[i] != target.shape()[i])
                .unwrap_or(0);
            return Err(Error::dim(
                "metrics",
                ax,
                target.shape().get(ax).copied().unwrap_or(0),
                pred.shape().get(ax).copied().unwrap_or(0),
            ));
        }
        if pred.rank() != 3 {
            return Err(Error::Argument(format!(
                "metrics expect [B, H, C] blocks, got {:?}",
                pred.shape()
            )));
        }
        let window_shape = pred.shape()[1..].to_vec();
        match &self.shape {
            Some(s) if *s != window_shape => {
                return Err(Error::dim("metrics", 1, s[0], window_shape[0]));
            }
            _ => self.shape = Some(window_shape),
        }
        for (p, t) in pred.data().iter().zip(target.data()) {
            let e = p - t;
            self.sum_sq += e * e;
            self.sum_abs += e.abs();
        }
        self.count += pred.numel();
        self.windows += pred.shape()[0];
        Ok(())
    }

    pub fn finish(&self) -> Result<ForecastMetrics> {
        if self.count == 0 {
            return Err(Error::Config("no windows were evaluated".into()));
        }
        let n = self.count as f64;
        Ok(ForecastMetrics {
            mse: self.sum_sq / n,
            mae: self.sum_abs / n,
            windows: self.windows,
        })
    }
}

pub fn metrics(preds: &[Tensor], targets: &[Tensor]) -> Result<ForecastMetrics> {
    if preds.len() != targets.len() {
        return Err(Error::dim("metrics", 0, targets.len(), preds.len()));
    }
    let mut acc = MetricsAccumulator::new();
    for (p, t) in preds.iter().zip(targets) {
        acc.push(p, t)?;
    }
    acc.finish()
}
