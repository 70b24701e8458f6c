//! Reference forecasters: last-value repetition, NLinear and DLinear.
//!
//! The linear baselines share one `[L, H]` map across channels. NLinear
//! subtracts the last observed value before the map and adds it back after;
//! DLinear splits the lookback into a moving-average trend and a seasonal
//! remainder and sums two separate maps.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::forecaster::{input_dims, Forecaster, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_MOVING_AVG: usize = 25;

/// Repeats `x[L-1, :]` for all `H` steps of a `[L, C]` lookback.
pub fn naive_last(x: &Tensor, horizon: usize) -> Result<Tensor> {
    let [l, c] = *x.shape() else {
        return Err(Error::Argument(format!(
            "naive_last expects [L, C], got {:?}",
            x.shape()
        )));
    };
    let last = &x.data()[(l - 1) * c..];
    let data = (0..horizon).flat_map(|_| last.iter().copied()).collect();
    Tensor::new(&[horizon, c], data)
}

#[derive(Clone, Debug)]
pub struct NaiveLast {
    lookback: usize,
    horizon: usize,
    params: ParamSet,
}

impl NaiveLast {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        NaiveLast {
            lookback,
            horizon,
            params: ParamSet::new(),
        }
    }
}

impl Forecaster for NaiveLast {
    fn lookback(&self) -> usize {
        self.lookback
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, _params: &[Var], x: Var) -> Result<Var> {
        let (_, l, _) = input_dims(tape, x, self.lookback, None)?;
        let last = tape.narrow(x, 1, l - 1, 1)?;
        tape.concat(&vec![last; self.horizon], 1)
    }
}

/// Centered moving average of window `m` with edge replication, per channel
/// of a `[L, C]` series. Returns `(trend, seasonal)` with `seasonal = x - trend`.
pub fn moving_average_decompose(x: &Tensor, m: usize) -> Result<(Tensor, Tensor)> {
    let [l, c] = *x.shape() else {
        return Err(Error::Argument(format!(
            "decomposition expects [L, C], got {:?}",
            x.shape()
        )));
    };
    check_window(m, l)?;
    let half = (m - 1) / 2;
    let xd = x.data();
    let at = |t: isize, ch: usize| xd[(t.clamp(0, l as isize - 1) as usize) * c + ch];
    let mut trend = vec![0.0; l * c];
    for ch in 0..c {
        for t in 0..l {
            let lo = t as isize - half as isize;
            let sum: f64 = (0..m as isize).map(|k| at(lo + k, ch)).sum();
            trend[t * c + ch] = sum / m as f64;
        }
    }
    let seasonal = xd.iter().zip(&trend).map(|(v, tr)| v - tr).collect();
    Ok((
        Tensor::new(&[l, c], trend)?,
        Tensor::new(&[l, c], seasonal)?,
    ))
}

fn check_window(m: usize, l: usize) -> Result<()> {
    if m.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "moving-average window must be odd, got {m}"
        )));
    }
    if m < 3 || m > 2 * l - 1 {
        return Err(Error::Argument(format!(
            "moving-average window {m} outside [3, {}]",
            2 * l - 1
        )));
    }
    Ok(())
}

fn linear_params(
    prefix: &str,
    lookback: usize,
    horizon: usize,
    rng: &mut SplitMix64,
    params: &mut ParamSet,
) {
    params.push(
        format!("{prefix}.weight"),
        Tensor::uniform_fan_in(&[lookback, horizon], lookback, rng),
    );
    params.push(format!("{prefix}.bias"), Tensor::zeros(&[horizon]));
}

/// Applies the shared `[L, H]` map to every channel of a `[B, L, C]` tensor.
fn channel_linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xt = tape.permute(x, &[0, 2, 1])?;
    let y = tape.linear(xt, weight, bias)?;
    tape.permute(y, &[0, 2, 1])
}

#[derive(Clone, Debug)]
pub struct NLinear {
    lookback: usize,
    horizon: usize,
    params: ParamSet,
}

impl NLinear {
    pub fn new(lookback: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut params = ParamSet::new();
        linear_params("linear", lookback, horizon, &mut rng, &mut params);
        NLinear {
            lookback,
            horizon,
            params,
        }
    }
}

impl Forecaster for NLinear {
    fn lookback(&self) -> usize {
        self.lookback
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let (b, l, c) = input_dims(tape, x, self.lookback, None)?;
        let xd = tape.value(x).data();
        let mut shifted = Vec::with_capacity(xd.len());
        let mut anchor = Vec::with_capacity(b * self.horizon * c);
        for window in xd.chunks(l * c) {
            let last = &window[(l - 1) * c..];
            shifted.extend(
                window
                    .chunks(c)
                    .flat_map(|row| row.iter().zip(last).map(|(v, z)| v - z)),
            );
            for _ in 0..self.horizon {
                anchor.extend_from_slice(last);
            }
        }
        let shifted = tape.constant(Tensor::new(&[b, l, c], shifted)?);
        let anchor = tape.constant(Tensor::new(&[b, self.horizon, c], anchor)?);
        let y = channel_linear(tape, shifted, params[0], params[1])?;
        tape.add(y, anchor)
    }
}

#[derive(Clone, Debug)]
pub struct DLinear {
    lookback: usize,
    horizon: usize,
    moving_avg: usize,
    params: ParamSet,
}

impl DLinear {
    pub fn new(lookback: usize, horizon: usize, moving_avg: usize, seed: u64) -> Result<Self> {
        check_window(moving_avg, lookback)?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut params = ParamSet::new();
        linear_params("trend", lookback, horizon, &mut rng, &mut params);
        linear_params("seasonal", lookback, horizon, &mut rng, &mut params);
        Ok(DLinear {
            lookback,
            horizon,
            moving_avg,
            params,
        })
    }

    pub fn moving_avg(&self) -> usize {
        self.moving_avg
    }
}

impl Forecaster for DLinear {
    fn lookback(&self) -> usize {
        self.lookback
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let (b, l, c) = input_dims(tape, x, self.lookback, None)?;
        let mut trend = Vec::with_capacity(b * l * c);
        let mut seasonal = Vec::with_capacity(b * l * c);
        for window in tape.value(x).data().chunks(l * c) {
            let (tr, se) =
                moving_average_decompose(&Tensor::new(&[l, c], window.to_vec())?, self.moving_avg)?;
            trend.extend(tr.into_data());
            seasonal.extend(se.into_data());
        }
        let trend = tape.constant(Tensor::new(&[b, l, c], trend)?);
        let seasonal = tape.constant(Tensor::new(&[b, l, c], seasonal)?);
        let yt = channel_linear(tape, trend, params[0], params[1])?;
        let ys = channel_linear(tape, seasonal, params[2], params[3])?;
        tape.add(yt, ys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_repeats_last_row() {
        let x = Tensor::new(&[3, 2], vec![9., 9., 0., 0., 1., 2.]).unwrap();
        let y = naive_last(&x, 4).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert!(y.data().chunks(2).all(|r| r == [1., 2.]));

        let m = NaiveLast::new(3, 4);
        let yb = m.predict(&x.clone().reshape(&[1, 3, 2]).unwrap()).unwrap();
        assert_eq!(yb.data(), y.data());
    }

    #[test]
    fn decomposition_edge_cases() {
        let x = Tensor::full(&[10, 1], 2.5);
        let (tr, se) = moving_average_decompose(&x, 5).unwrap();
        assert!(tr.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        assert!(se.data().iter().all(|&v| v.abs() < 1e-15));

        let ramp = Tensor::new(&[30, 1], (0..30).map(|i| 0.5 * i as f64).collect()).unwrap();
        let (tr, _) = moving_average_decompose(&ramp, 7).unwrap();
        for t in 3..27 {
            assert!((tr.data()[t] - ramp.data()[t]).abs() < 1e-12);
        }
        assert!(moving_average_decompose(&ramp, 6).is_err());
        assert!(moving_average_decompose(&ramp, 1).is_err());
        assert!(moving_average_decompose(&ramp, 61).is_err());
        assert!(moving_average_decompose(&ramp, 59).is_ok());
    }

    #[test]
    fn zeroed_nlinear_is_naive() {
        let mut m = NLinear::new(5, 3, 4);
        m.params_mut()
            .tensors_mut()
            .iter_mut()
            .for_each(|t| t.data_mut().fill(0.0));
        let x = Tensor::new(&[1, 5, 2], (0..10).map(|i| (i * i) as f64).collect()).unwrap();
        let y = m.predict(&x).unwrap();
        let naive = naive_last(&x.clone().reshape(&[5, 2]).unwrap(), 3).unwrap();
        assert_eq!(y.data(), naive.data());
    }

    #[test]
    fn zeroed_dlinear_outputs_zero() {
        let mut m = DLinear::new(8, 3, 3, 0).unwrap();
        m.params_mut()
            .tensors_mut()
            .iter_mut()
            .for_each(|t| t.data_mut().fill(0.0));
        let x = Tensor::new(&[2, 8, 1], (0..16).map(f64::from).collect()).unwrap();
        assert!(m.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dlinear_averaging_trend_reproduces_constant() {
        let (l, h) = (6, 2);
        let mut m = DLinear::new(l, h, 3, 0).unwrap();
        let p = m.params_mut();
        p.get_mut("trend.weight")
            .unwrap()
            .data_mut()
            .fill(1.0 / l as f64);
        p.get_mut("seasonal.weight").unwrap().data_mut().fill(0.0);
        let x = Tensor::full(&[1, l, 1], 4.0);
        let y = m.predict(&x).unwrap();
        assert!(y.data().iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn even_window_rejected() {
        assert!(matches!(DLinear::new(10, 2, 4, 0), Err(Error::Argument(_))));
    }
}
