//! Run configuration with a flat `key=value` text form and a JSON form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::DEFAULT_MOVING_AVG;
use crate::data::SplitScheme;
use crate::error::{Error, Result};
use crate::mppn::MppnConfig;
use crate::predictability::Binning;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Mppn,
    DLinear,
    NLinear,
    Naive,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Mppn => "mppn",
            ModelKind::DLinear => "dlinear",
            ModelKind::NLinear => "nlinear",
            ModelKind::Naive => "naive",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mppn" => Ok(ModelKind::Mppn),
            "dlinear" => Ok(ModelKind::DLinear),
            "nlinear" => Ok(ModelKind::NLinear),
            "naive" => Ok(ModelKind::Naive),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub data: Option<String>,
    pub split: SplitScheme,
    pub date_column: bool,
    pub strict: bool,
    pub lookback: usize,
    pub horizon: usize,
    /// Filled from the dataset when training starts.
    pub channels: Option<usize>,
    pub d_model: usize,
    pub resolutions: Vec<usize>,
    /// Explicit periods; empty means detect the top `top_k` from the training split.
    pub periods: Vec<usize>,
    pub top_k: usize,
    pub overlap: bool,
    pub moving_avg: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub q: usize,
    pub binning: Binning,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Mppn,
            data: None,
            split: SplitScheme::Standard,
            date_column: true,
            strict: true,
            lookback: 336,
            horizon: 96,
            channels: None,
            d_model: 48,
            resolutions: vec![1, 3, 4, 6],
            periods: Vec::new(),
            top_k: 2,
            overlap: false,
            moving_avg: DEFAULT_MOVING_AVG,
            lr: 1e-3,
            weight_decay: 1e-5,
            max_epochs: 30,
            patience: 3,
            batch_size: 32,
            seed: 2021,
            q: 10,
            binning: Binning::EqualFrequency,
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse_value(key, p.trim())).collect()
}

fn parse_value<T: FromStr>(key: &str, s: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{s}`: {e}")))
}

impl RunConfig {
    /// `key=value` lines, one per field, in declaration order.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("model={}", self.model),
            format!("data={}", self.data.as_deref().unwrap_or("")),
            format!("split={}", self.split),
            format!("date_column={}", self.date_column),
            format!("strict={}", self.strict),
            format!("lookback={}", self.lookback),
            format!("horizon={}", self.horizon),
            format!(
                "channels={}",
                self.channels.map(|c| c.to_string()).unwrap_or_default()
            ),
            format!("d_model={}", self.d_model),
            format!("resolutions={}", join(&self.resolutions)),
            format!("periods={}", join(&self.periods)),
            format!("top_k={}", self.top_k),
            format!("overlap={}", self.overlap),
            format!("moving_avg={}", self.moving_avg),
            format!("lr={}", self.lr),
            format!("weight_decay={}", self.weight_decay),
            format!("max_epochs={}", self.max_epochs),
            format!("patience={}", self.patience),
            format!("batch_size={}", self.batch_size),
            format!("seed={}", self.seed),
            format!("q={}", self.q),
            format!("binning={}", self.binning),
        ];
        lines.push(String::new());
        lines.join("\n")
    }

    /// Parses `key=value` text. Blank lines and `#` comments are ignored;
    /// missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got `{line}`",
                    n + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model" => self.model = v.parse()?,
            "data" => self.data = (!v.is_empty()).then(|| v.to_string()),
            "split" => self.split = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "date_column" => self.date_column = parse_value(key, v)?,
            "strict" => self.strict = parse_value(key, v)?,
            "lookback" => self.lookback = parse_value(key, v)?,
            "horizon" => self.horizon = parse_value(key, v)?,
            "channels" => {
                self.channels = if v.is_empty() {
                    None
                } else {
                    Some(parse_value(key, v)?)
                }
            }
            "d_model" => self.d_model = parse_value(key, v)?,
            "resolutions" => self.resolutions = parse_list(key, v)?,
            "periods" => self.periods = parse_list(key, v)?,
            "top_k" => self.top_k = parse_value(key, v)?,
            "overlap" => self.overlap = parse_value(key, v)?,
            "moving_avg" => self.moving_avg = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "max_epochs" => self.max_epochs = parse_value(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "q" => self.q = parse_value(key, v)?,
            "binning" => {
                self.binning = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Accepts either the `key=value` form or a JSON object.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text)
                .map_err(|e| Error::Config(format!("invalid JSON config: {e}")))
        } else {
            Self::from_text(text)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "lookback and horizon must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0)
            || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0)
        {
            return Err(Error::Config(
                "lr must be positive and weight_decay non-negative".into(),
            ));
        }
        if self.model == ModelKind::Mppn && self.periods.is_empty() && self.top_k == 0 {
            return Err(Error::Config(
                "top_k must be >= 1 when periods are detected".into(),
            ));
        }
        Ok(())
    }

    /// MPPN hyperparameters; needs `channels` and resolved `periods`.
    pub fn mppn_config(&self) -> Result<MppnConfig> {
        let channels = self
            .channels
            .ok_or_else(|| Error::Config("channel count is not set".into()))?;
        if self.periods.is_empty() {
            return Err(Error::Config("no periods configured".into()));
        }
        Ok(MppnConfig {
            lookback: self.lookback,
            horizon: self.horizon,
            channels,
            d_model: self.d_model,
            resolutions: self.resolutions.clone(),
            periods: self.periods.clone(),
            overlap: self.overlap,
            seed: self.seed,
        })
    }
}
