//! Seeded generator for sums of sinusoids with trend and Gaussian noise.

use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub amplitude: f64,
    /// Period in timesteps.
    pub period: f64,
    /// Phase offset in radians.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub tones: Vec<Tone>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub length: usize,
    #[serde(default)]
    pub trend_slope: f64,
    #[serde(default)]
    pub noise_sd: f64,
    pub channels: Vec<ChannelSpec>,
}

impl SynthSpec {
    /// `channels` copies of one tone, each shifted in phase by `2π c / channels`.
    pub fn single_tone(
        length: usize,
        channels: usize,
        amplitude: f64,
        period: f64,
        noise_sd: f64,
    ) -> Self {
        SynthSpec {
            length,
            trend_slope: 0.0,
            noise_sd,
            channels: (0..channels)
                .map(|c| ChannelSpec {
                    name: format!("ch{c}"),
                    tones: vec![Tone {
                        amplitude,
                        period,
                        phase: 2.0 * PI * c as f64 / channels as f64,
                    }],
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.length < 8 {
            return Err(Error::Argument(format!(
                "synthetic length must be >= 8, got {}",
                self.length
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::Argument("at least one channel is required".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) || !self.trend_slope.is_finite() {
            return Err(Error::Argument(
                "noise_sd must be finite and >= 0, trend_slope finite".into(),
            ));
        }
        for ch in &self.channels {
            for tone in &ch.tones {
                if !(tone.period.is_finite() && tone.period > 0.0)
                    || !tone.amplitude.is_finite()
                    || !tone.phase.is_finite()
                {
                    return Err(Error::Argument(format!(
                        "channel `{}` has an invalid tone {tone:?}",
                        ch.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates the series with hourly timestamps from 2016-07-01 00:00:00.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SeriesDataset> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let c = spec.channels.len();
    let mut values = Vec::with_capacity(spec.length * c);
    for t in 0..spec.length {
        let tf = t as f64;
        for ch in &spec.channels {
            let signal: f64 = ch
                .tones
                .iter()
                .map(|tone| tone.amplitude * (2.0 * PI * tf / tone.period + tone.phase).sin())
                .sum();
            values.push(signal + spec.trend_slope * tf + noise.sample(&mut rng));
        }
    }
    let start = NaiveDate::from_ymd_opt(2016, 7, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let stamps = (0..spec.length)
        .map(|t| {
            (start + Duration::hours(t as i64))
                .format("%Y-%m-%d %H:%M:%S")
                .to_string()
        })
        .collect();
    SeriesDataset::new(
        spec.channels.iter().map(|c| c.name.clone()).collect(),
        values,
        Some(stamps),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_series() {
        let spec = SynthSpec::single_tone(100, 2, 1.0, 24.0, 0.3);
        assert_eq!(generate(&spec, 5).unwrap(), generate(&spec, 5).unwrap());
        assert_ne!(generate(&spec, 5).unwrap(), generate(&spec, 6).unwrap());
    }

    #[test]
    fn timestamps_are_hourly() {
        let ds = generate(&SynthSpec::single_tone(30, 1, 1.0, 24.0, 0.0), 0).unwrap();
        let ts = ds.timestamps().unwrap();
        assert_eq!(ts[0], "2016-07-01 00:00:00");
        assert_eq!(ts[25], "2016-07-02 01:00:00");
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec::single_tone(4, 1, 1.0, 24.0, 0.0), 0).is_err());
        assert!(generate(&SynthSpec::single_tone(40, 1, 1.0, 0.0, 0.0), 0).is_err());
        assert!(generate(&SynthSpec::single_tone(40, 1, 1.0, 4.0, -1.0), 0).is_err());
        assert!(generate(&SynthSpec::single_tone(40, 0, 1.0, 4.0, 0.0), 0).is_err());
    }
}
