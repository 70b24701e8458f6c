//! Dominant-period extraction from the channel-averaged amplitude spectrum.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel-averaged DFT magnitudes at integer frequencies `0..=T/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeSpectrum {
    pub amplitudes: Vec<f64>,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    pub period: usize,
    pub frequency: usize,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSet {
    pub entries: Vec<PeriodEntry>,
    pub k: usize,
}

impl PeriodSet {
    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }
}

/// DFT magnitudes of one mean-removed series at frequencies `0..=T/2`.
pub fn dft_magnitudes(series: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let t = series.len();
    let mean = series.iter().sum::<f64>() / t as f64;
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    planner.plan_fft_forward(t).process(&mut buf);
    buf[..=t / 2].iter().map(|z| z.norm()).collect()
}

/// Amplitude spectrum of a `[T, C]` series, averaged over channels.
pub fn amplitude_spectrum(x: &Tensor) -> Result<AmplitudeSpectrum> {
    let [t, c] = *x.shape() else {
        return Err(Error::Argument(format!(
            "expected a [T, C] series, got {:?}",
            x.shape()
        )));
    };
    if t < 4 {
        return Err(Error::Argument(format!(
            "need at least 4 timesteps for a spectrum, got {t}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    let mut planner = FftPlanner::new();
    let mut amplitudes = vec![0.0; t / 2 + 1];
    for ch in 0..c {
        let col: Vec<f64> = x.data().iter().skip(ch).step_by(c).copied().collect();
        for (a, m) in amplitudes
            .iter_mut()
            .zip(dft_magnitudes(&col, &mut planner))
        {
            *a += m;
        }
    }
    amplitudes.iter_mut().for_each(|a| *a /= c as f64);
    Ok(AmplitudeSpectrum { amplitudes, len: t })
}

/// Top-`k` distinct periods `ceil(T/f)` for `f` in `1..=T/2`, by descending
/// amplitude. Ties prefer the lower frequency; a period already taken by a
/// stronger frequency is skipped.
pub fn topk_periods(spec: &AmplitudeSpectrum, k: usize) -> Result<PeriodSet> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let t = spec.len;
    let mut freqs: Vec<usize> = (1..spec.amplitudes.len()).collect();
    freqs.sort_by(|&a, &b| {
        spec.amplitudes[b]
            .total_cmp(&spec.amplitudes[a])
            .then(a.cmp(&b))
    });
    let mut entries: Vec<PeriodEntry> = Vec::with_capacity(k);
    for f in freqs {
        let period = t.div_ceil(f);
        if entries.iter().any(|e| e.period == period) {
            continue;
        }
        entries.push(PeriodEntry {
            period,
            frequency: f,
            amplitude: spec.amplitudes[f],
        });
        if entries.len() == k {
            break;
        }
    }
    Ok(PeriodSet { entries, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tones(t: usize, parts: &[(f64, f64)]) -> Tensor {
        let data = (0..t)
            .map(|i| {
                parts
                    .iter()
                    .map(|&(amp, f)| amp * (2.0 * PI * f * i as f64 / t as f64).sin())
                    .sum()
            })
            .collect();
        Tensor::new(&[t, 1], data).unwrap()
    }

    #[test]
    fn single_tone_peak() {
        let spec = amplitude_spectrum(&tones(96, &[(1.0, 4.0)])).unwrap();
        let argmax = (1..=48)
            .max_by(|&a, &b| spec.amplitudes[a].total_cmp(&spec.amplitudes[b]))
            .unwrap();
        assert_eq!(argmax, 4);
        assert_eq!(topk_periods(&spec, 1).unwrap().periods(), vec![24]);
    }

    #[test]
    fn constant_has_no_energy() {
        let x = Tensor::full(&[50, 2], 3.5);
        let spec = amplitude_spectrum(&x).unwrap();
        assert!(spec.amplitudes[1..].iter().all(|&a| a <= 1e-9));
    }

    #[test]
    fn two_tones_ordered() {
        let spec = amplitude_spectrum(&tones(96, &[(2.0, 4.0), (1.0, 12.0)])).unwrap();
        let ratio = spec.amplitudes[4] / spec.amplitudes[12];
        assert!((ratio - 2.0).abs() < 0.02);
        let ps = topk_periods(&spec, 2).unwrap();
        assert_eq!(ps.periods(), vec![24, 8]);
    }

    #[test]
    fn duplicate_periods_are_dropped() {
        // T = 9: f=4 and f=3 both map to period 3.
        let spec = AmplitudeSpectrum {
            amplitudes: vec![0.0, 0.1, 0.2, 0.9, 1.0],
            len: 9,
        };
        let ps = topk_periods(&spec, 3).unwrap();
        assert_eq!(ps.periods(), vec![3, 5, 9]);
        assert_eq!(ps.entries[0].frequency, 4);
    }

    #[test]
    fn errors() {
        assert!(amplitude_spectrum(&Tensor::zeros(&[3, 1])).is_err());
        let spec = amplitude_spectrum(&tones(16, &[(1.0, 2.0)])).unwrap();
        assert!(topk_periods(&spec, 0).is_err());
    }
}
