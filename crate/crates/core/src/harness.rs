//! Training and evaluation orchestration.

use serde::{Deserialize, Serialize};

use crate::baselines::{DLinear, NLinear, NaiveLast};
use crate::checkpoint::Checkpoint;
use crate::config::{ModelKind, RunConfig};
use crate::data::{
    chronological_split, ForecastMetrics, MetricsAccumulator, SeriesDataset, Split,
    SplitBoundaries, SplitScheme, Standardizer, Windows,
};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, ParamSet};
use crate::mppn::{GateMatrix, Mppn};
use crate::period::{amplitude_spectrum, topk_periods, PeriodEntry, PeriodSet};
use crate::predictability::{dataset_predictability, Binning, PredictabilityReport};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

const STD_MEAN: &str = "standardizer.mean";
const STD_SCALE: &str = "standardizer.std";

#[derive(Clone, Debug)]
pub enum Model {
    Mppn(Mppn),
    DLinear(DLinear),
    NLinear(NLinear),
    Naive(NaiveLast),
}

impl Model {
    /// Builds the configured model. MPPN needs `channels` and `periods` set.
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Mppn => Model::Mppn(Mppn::new(cfg.mppn_config()?)?),
            ModelKind::DLinear => Model::DLinear(
                DLinear::new(cfg.lookback, cfg.horizon, cfg.moving_avg, cfg.seed)
                    .map_err(|e| Error::Config(e.to_string()))?,
            ),
            ModelKind::NLinear => Model::NLinear(NLinear::new(cfg.lookback, cfg.horizon, cfg.seed)),
            ModelKind::Naive => Model::Naive(NaiveLast::new(cfg.lookback, cfg.horizon)),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mppn(_) => ModelKind::Mppn,
            Model::DLinear(_) => ModelKind::DLinear,
            Model::NLinear(_) => ModelKind::NLinear,
            Model::Naive(_) => ModelKind::Naive,
        }
    }

    pub fn forecaster(&self) -> &dyn Forecaster {
        match self {
            Model::Mppn(m) => m,
            Model::DLinear(m) => m,
            Model::NLinear(m) => m,
            Model::Naive(m) => m,
        }
    }

    pub fn forecaster_mut(&mut self) -> &mut dyn Forecaster {
        match self {
            Model::Mppn(m) => m,
            Model::DLinear(m) => m,
            Model::NLinear(m) => m,
            Model::Naive(m) => m,
        }
    }

    pub fn params(&self) -> &ParamSet {
        self.forecaster().params()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forecaster().predict(x)
    }
}

/// Standardized dataset with its split boundaries.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: SeriesDataset,
    pub bounds: SplitBoundaries,
    pub standardizer: Standardizer,
}

impl Prepared {
    /// Splits chronologically and fits the standardizer on the training rows.
    pub fn fit(
        dataset: &SeriesDataset,
        scheme: SplitScheme,
        lookback: usize,
        horizon: usize,
        strict: bool,
    ) -> Result<Self> {
        let bounds = chronological_split(dataset.len(), scheme, lookback, horizon)?;
        let standardizer = Standardizer::fit(dataset, bounds.range(Split::Train), strict)?;
        Ok(Self::with(dataset, bounds, standardizer))
    }

    pub fn with(
        dataset: &SeriesDataset,
        bounds: SplitBoundaries,
        standardizer: Standardizer,
    ) -> Self {
        Prepared {
            data: standardizer.apply(dataset),
            bounds,
            standardizer,
        }
    }

    pub fn train_tensor(&self) -> Result<Tensor> {
        self.data.slice_tensor(self.bounds.range(Split::Train))
    }
}

/// Top-`k` periods of the standardized training split.
pub fn detect_periods(prepared: &Prepared, k: usize) -> Result<PeriodSet> {
    topk_periods(&amplitude_spectrum(&prepared.train_tensor()?)?, k)
}

/// Patience-based stopping on a validation loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs: 0,
            stale: 0,
        }
    }

    /// Records one epoch; returns true when it set a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.epochs += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epochs;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based epoch of the best loss, 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The run configuration with channels and periods resolved.
    pub config: RunConfig,
    pub model: Model,
    pub standardizer: Standardizer,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        to_checkpoint(&self.config, &self.model, &self.standardizer)
    }
}

/// Seed for the shuffle of one epoch.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One Adam step on a batch; returns the batch loss.
fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<f64> {
    let f = model.forecaster_mut();
    let mut tape = Tape::new();
    let vars: Vec<Var> = f
        .params()
        .tensors()
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect();
    let x = tape.constant(inputs.clone());
    let y = f.forward(&mut tape, &vars, x)?;
    let target = tape.constant(targets.clone());
    let loss = tape.mse_loss(y, target)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
        })
        .collect();
    adam.step(f.params_mut().tensors_mut(), &grads)?;
    Ok(value)
}

/// Trains with shuffled mini-batch Adam and patience-based early stopping,
/// returning the parameters of the best validation epoch.
pub fn train(cfg: &RunConfig, dataset: &SeriesDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prepared = Prepared::fit(dataset, cfg.split, cfg.lookback, cfg.horizon, cfg.strict)?;
    let mut cfg = cfg.clone();
    cfg.channels = Some(dataset.channels());
    if cfg.model == ModelKind::Mppn && cfg.periods.is_empty() {
        let found = detect_periods(&prepared, cfg.top_k)?;
        log::info!("detected periods {:?}", found.periods());
        cfg.periods = found.periods();
    }
    let mut model = Model::build(&cfg)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, model.params().tensors());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params().clone();
    let mut log = Vec::new();
    let trainable = !model.params().is_empty();
    let epochs = if trainable { cfg.max_epochs } else { 1 };

    for epoch in 1..=epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        if trainable {
            let mut windows = Windows::new(
                &prepared.data,
                &prepared.bounds,
                Split::Train,
                cfg.lookback,
                cfg.horizon,
            )?;
            windows.shuffle(epoch_seed(cfg.seed, epoch));
            for (step, batch) in windows.batches(cfg.batch_size).enumerate() {
                let loss = train_step(&mut model, &mut adam, &batch.inputs, &batch.targets)?;
                if !loss.is_finite() {
                    return Err(Error::Runtime(format!(
                        "training diverged at epoch {epoch}, step {step}"
                    )));
                }
                sum += loss * batch.origins.len() as f64;
                count += batch.origins.len();
            }
        }
        let val = evaluate_split(&model, &prepared, Split::Val, cfg.batch_size)?.mse;
        if !val.is_finite() {
            return Err(Error::Runtime(format!(
                "validation loss is not finite at epoch {epoch}"
            )));
        }
        if stopper.observe(val) {
            best = model.params().clone();
        }
        let entry = EpochLog {
            epoch,
            train_mse: if count > 0 {
                sum / count as f64
            } else {
                f64::NAN
            },
            val_mse: val,
            steps: adam.steps(),
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6}{}",
            entry.train_mse,
            val,
            if stopper.best_epoch() == epoch {
                " *"
            } else {
                ""
            }
        );
        log.push(entry);
        if stopper.should_stop() {
            log::info!(
                "early stop after epoch {epoch}; best epoch {}",
                stopper.best_epoch()
            );
            break;
        }
    }
    model.forecaster_mut().params_mut().assign(&best)?;
    Ok(TrainOutcome {
        config: cfg,
        model,
        standardizer: prepared.standardizer,
        log,
        best_epoch: stopper.best_epoch(),
        best_val_mse: stopper.best(),
    })
}

/// Metrics over every window of `split`, in chronological order.
pub fn evaluate_split(
    model: &Model,
    prepared: &Prepared,
    split: Split,
    batch_size: usize,
) -> Result<ForecastMetrics> {
    let f = model.forecaster();
    let windows = Windows::new(
        &prepared.data,
        &prepared.bounds,
        split,
        f.lookback(),
        f.horizon(),
    )?;
    let mut acc = MetricsAccumulator::new();
    for batch in windows.batches(batch_size) {
        let pred = model.predict(&batch.inputs)?;
        acc.push(&pred, &batch.targets)?;
    }
    acc.finish()
}

pub fn to_checkpoint(cfg: &RunConfig, model: &Model, standardizer: &Standardizer) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    tensors.push((STD_MEAN.into(), Tensor::vector(standardizer.mean.clone())));
    tensors.push((STD_SCALE.into(), Tensor::vector(standardizer.std.clone())));
    Checkpoint {
        config: cfg.to_text(),
        tensors,
    }
}

/// A model restored from a checkpoint.
#[derive(Clone, Debug)]
pub struct Restored {
    pub config: RunConfig,
    pub model: Model,
    pub standardizer: Standardizer,
}

pub fn from_checkpoint(ck: &Checkpoint) -> Result<Restored> {
    let config = RunConfig::from_text(&ck.config)?;
    let mut model = Model::build(&config)?;
    let mut loaded = ParamSet::new();
    for name in model.params().names() {
        let t = ck
            .tensor(name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter `{name}`")))?;
        loaded.push(name.clone(), t.clone());
    }
    model.forecaster_mut().params_mut().assign(&loaded)?;
    let get = |name: &str| {
        ck.tensor(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| Error::Config(format!("checkpoint lacks `{name}`")))
    };
    let standardizer = Standardizer {
        mean: get(STD_MEAN)?,
        std: get(STD_SCALE)?,
    };
    Ok(Restored {
        config,
        model,
        standardizer,
    })
}

fn check_channels(restored: &Restored, dataset: &SeriesDataset) -> Result<()> {
    let expected = restored.standardizer.mean.len();
    if dataset.channels() != expected || restored.config.channels.is_some_and(|c| c != expected) {
        return Err(Error::Config(format!(
            "checkpoint was trained on {expected} channels, dataset has {}",
            dataset.channels()
        )));
    }
    Ok(())
}

/// Metrics of a restored model on one split of `dataset`, using the stored
/// standardization statistics.
pub fn evaluate(
    restored: &Restored,
    dataset: &SeriesDataset,
    split: Split,
    batch_size: usize,
) -> Result<ForecastMetrics> {
    check_channels(restored, dataset)?;
    let cfg = &restored.config;
    let bounds = chronological_split(dataset.len(), cfg.split, cfg.lookback, cfg.horizon)?;
    let prepared = Prepared::with(dataset, bounds, restored.standardizer.clone());
    evaluate_split(&restored.model, &prepared, split, batch_size)
}

/// Forecast `[H, C]` in the original scale from the `L` rows before `origin`
/// (default: the end of the data).
pub fn forecast(
    restored: &Restored,
    dataset: &SeriesDataset,
    origin: Option<usize>,
) -> Result<Tensor> {
    check_channels(restored, dataset)?;
    let l = restored.config.lookback;
    let origin = origin.unwrap_or(dataset.len());
    if origin < l || origin > dataset.len() {
        return Err(Error::Config(format!(
            "origin {origin} needs {l} rows of history within {} rows",
            dataset.len()
        )));
    }
    let window = restored
        .standardizer
        .apply(&dataset.rows(origin - l..origin));
    let c = dataset.channels();
    let x = Tensor::new(&[1, l, c], window.values().to_vec())?;
    let mut y = restored.model.predict(&x)?.into_data();
    restored.standardizer.invert(&mut y);
    Tensor::new(&[restored.config.horizon, c], y)
}

pub fn gates(restored: &Restored, names: Option<&[String]>) -> Result<GateMatrix> {
    let Model::Mppn(m) = &restored.model else {
        return Err(Error::Config(format!(
            "gates need an mppn checkpoint, got {}",
            restored.model.kind()
        )));
    };
    let default: Vec<String>;
    let names = match names {
        Some(n) => n,
        None => {
            default = (0..m.config().channels).map(|c| format!("ch{c}")).collect();
            &default
        }
    };
    GateMatrix::from_model(m, names)
}

#[derive(Clone, Debug)]
pub struct AnalyzeOptions {
    pub q: Vec<usize>,
    pub binning: Binning,
    pub k: usize,
    pub period_override: Vec<usize>,
    pub split: SplitScheme,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            q: vec![10],
            binning: Binning::EqualFrequency,
            k: 2,
            period_override: Vec::new(),
            split: SplitScheme::Standard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub predictability: Vec<PredictabilityReport>,
    pub periods: PeriodSet,
    /// True when periods came from an explicit override rather than the spectrum.
    pub period_override: bool,
}

/// Predictability over the raw series for each `Q`, plus periods of the
/// standardized training split.
pub fn analyze(dataset: &SeriesDataset, opts: &AnalyzeOptions) -> Result<AnalyzeReport> {
    if opts.q.is_empty() {
        return Err(Error::Argument("at least one Q is required".into()));
    }
    let predictability = opts
        .q
        .iter()
        .map(|&q| dataset_predictability(dataset, q, opts.binning))
        .collect::<Result<Vec<_>>>()?;
    let periods = if opts.period_override.is_empty() {
        let train_end = match opts.split {
            SplitScheme::Ett => dataset.len() * 6 / 10,
            SplitScheme::Standard => dataset.len() * 7 / 10,
        };
        let bounds = SplitBoundaries {
            train_end,
            val_end: train_end,
            total: dataset.len(),
        };
        let standardizer = Standardizer::fit(dataset, bounds.range(Split::Train), false)?;
        let prepared = Prepared::with(dataset, bounds, standardizer);
        detect_periods(&prepared, opts.k)?
    } else {
        if let Some(&p) = opts.period_override.iter().find(|&&p| p < 2) {
            return Err(Error::Argument(format!("override period {p} is below 2")));
        }
        PeriodSet {
            entries: opts
                .period_override
                .iter()
                .map(|&period| PeriodEntry {
                    period,
                    frequency: 0,
                    amplitude: 0.0,
                })
                .collect(),
            k: opts.period_override.len(),
        }
    };
    Ok(AnalyzeReport {
        predictability,
        periods,
        period_override: !opts.period_override.is_empty(),
    })
}
