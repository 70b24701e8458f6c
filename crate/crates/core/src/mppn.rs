//! Multi-resolution periodic pattern network.
//!
//! Each channel is processed independently with shared weights:
//!
//! 1. patching: a `1 -> D` convolution with kernel and stride `r` turns the
//!    lookback into `ceil(L/r)` patch embeddings per resolution `r`;
//! 2. pattern mining: for every period `p` a `D -> D` convolution with kernel
//!    `floor(L/p)` and dilation `floor(p/r)` aggregates all occurrences of each
//!    phase; the last `floor(p/r)` outputs are kept;
//! 3. the phase slots of every `(period, resolution)` pair are concatenated
//!    into `P` pattern rows of width `D`;
//! 4. a per-channel sigmoid gate `sigmoid(E[c, p])` scales each pattern row;
//! 5. one shared linear layer maps the flattened `P * D` features to `H` steps.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{input_dims, Forecaster, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MppnConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub d_model: usize,
    pub resolutions: Vec<usize>,
    pub periods: Vec<usize>,
    /// Stride-1 patching instead of stride `r`.
    pub overlap: bool,
    pub seed: u64,
}

impl Default for MppnConfig {
    fn default() -> Self {
        MppnConfig {
            lookback: 336,
            horizon: 96,
            channels: 1,
            d_model: 48,
            resolutions: vec![1, 3, 4, 6],
            periods: vec![24],
            overlap: false,
            seed: 0,
        }
    }
}

/// One `(period, resolution)` pair that contributes pattern slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternPair {
    pub period: usize,
    pub resolution: usize,
    /// Index of `resolution` in the configured list.
    pub resolution_index: usize,
    /// `floor(L / period)`
    pub kernel: usize,
    /// `floor(period / resolution)`, also the number of slots kept.
    pub dilation: usize,
}

impl MppnConfig {
    fn check_basic(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.channels == 0 || self.d_model == 0 {
            return Err(Error::Config(
                "lookback, horizon, channels and d_model must be positive".into(),
            ));
        }
        if self.resolutions.is_empty() {
            return Err(Error::Config("at least one resolution is required".into()));
        }
        if let Some(&r) = self
            .resolutions
            .iter()
            .find(|&&r| r == 0 || r > self.lookback)
        {
            return Err(Error::Config(format!(
                "resolution {r} must lie in [1, {}]",
                self.lookback
            )));
        }
        if let Some(&p) = self.periods.iter().find(|&&p| p < 2) {
            return Err(Error::Config(format!("period {p} is below 2")));
        }
        Ok(())
    }

    /// Pairs in concatenation order: periods as configured, resolutions as
    /// configured within each period. Pairs with `floor(L/p) < 1` or
    /// `floor(p/r) < 1` are skipped.
    pub fn pattern_pairs(&self) -> Result<Vec<PatternPair>> {
        self.check_basic()?;
        let mut pairs = Vec::new();
        for &period in &self.periods {
            for (resolution_index, &resolution) in self.resolutions.iter().enumerate() {
                let kernel = self.lookback / period;
                let dilation = period / resolution;
                if kernel < 1 || dilation < 1 {
                    log::warn!(
                        "skipping (period {period}, resolution {resolution}): kernel {kernel}, dilation {dilation}"
                    );
                    continue;
                }
                pairs.push(PatternPair {
                    period,
                    resolution,
                    resolution_index,
                    kernel,
                    dilation,
                });
            }
        }
        if pairs.is_empty() {
            return Err(Error::Config(format!(
                "no usable (period, resolution) pair for lookback {} with periods {:?} and resolutions {:?}",
                self.lookback, self.periods, self.resolutions
            )));
        }
        Ok(pairs)
    }

    /// Length of the patched sequence consumed by pattern mining.
    pub fn patched_len(&self, r: usize) -> usize {
        self.lookback.div_ceil(r)
    }
}

/// Total number of pattern slots `P`.
pub fn pattern_dim(config: &MppnConfig) -> Result<usize> {
    Ok(config.pattern_pairs()?.iter().map(|p| p.dilation).sum())
}

#[derive(Clone, Debug)]
pub struct Mppn {
    config: MppnConfig,
    pairs: Vec<PatternPair>,
    pattern_dim: usize,
    params: ParamSet,
    // indices into `params`
    patch: Vec<(usize, usize)>,
    mine: Vec<(usize, usize)>,
    embedding: usize,
    out_weight: usize,
    out_bias: usize,
}

impl Mppn {
    /// Builds a model with parameters drawn from the configured seed.
    pub fn new(config: MppnConfig) -> Result<Self> {
        let pairs = config.pattern_pairs()?;
        let pdim: usize = pairs.iter().map(|p| p.dilation).sum();
        let d = config.d_model;
        let mut rng = SplitMix64::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut patch = Vec::new();
        for &r in &config.resolutions {
            let w = params.push(
                format!("patch.r{r}.weight"),
                Tensor::uniform_fan_in(&[d, 1, r], r, &mut rng),
            );
            let b = params.push(format!("patch.r{r}.bias"), Tensor::zeros(&[d]));
            patch.push((w, b));
        }
        let mut mine = Vec::new();
        for pair in &pairs {
            let tag = format!("mine.p{}.r{}", pair.period, pair.resolution);
            let k = pair.kernel;
            let w = params.push(
                format!("{tag}.weight"),
                Tensor::uniform_fan_in(&[d, d, k], d * k, &mut rng),
            );
            let b = params.push(format!("{tag}.bias"), Tensor::zeros(&[d]));
            mine.push((w, b));
        }
        let embedding = params.push("channel.embedding", Tensor::zeros(&[config.channels, pdim]));
        let out_weight = params.push(
            "output.weight",
            Tensor::uniform_fan_in(&[pdim * d, config.horizon], pdim * d, &mut rng),
        );
        let out_bias = params.push("output.bias", Tensor::zeros(&[config.horizon]));
        Ok(Mppn {
            config,
            pairs,
            pattern_dim: pdim,
            params,
            patch,
            mine,
            embedding,
            out_weight,
            out_bias,
        })
    }

    pub fn config(&self) -> &MppnConfig {
        &self.config
    }

    pub fn pairs(&self) -> &[PatternPair] {
        &self.pairs
    }

    pub fn pattern_dim(&self) -> usize {
        self.pattern_dim
    }

    /// Patch embeddings `[N, D, ceil(L/r)]` of `[N, 1, L]` series at resolution index `j`.
    pub fn multi_resolution_patch(
        &self,
        tape: &mut Tape,
        params: &[Var],
        series: Var,
        j: usize,
    ) -> Result<Var> {
        let r = self.config.resolutions[j];
        let (w, b) = self.patch[j];
        multi_resolution_patch(tape, series, params[w], params[b], r, self.config.overlap)
    }

    /// Pattern tensor `[B, C, P, D]` for input `[B, L, C]`.
    pub fn assemble_patterns(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let (b, l, c) = input_dims(tape, x, self.config.lookback, Some(self.config.channels))?;
        let d = self.config.d_model;
        let series = tape.permute(x, &[0, 2, 1])?;
        let series = tape.reshape(series, &[b * c, 1, l])?;
        let mut patched: Vec<Option<Var>> = vec![None; self.config.resolutions.len()];
        let mut pieces = Vec::with_capacity(self.pairs.len());
        for (pair, &(w, bias)) in self.pairs.iter().zip(&self.mine) {
            let j = pair.resolution_index;
            let xr = match patched[j] {
                Some(v) => v,
                None => {
                    let v = self.multi_resolution_patch(tape, params, series, j)?;
                    patched[j] = Some(v);
                    v
                }
            };
            pieces.push(periodic_pattern_mine(
                tape,
                xr,
                params[w],
                params[bias],
                pair,
            )?);
        }
        let joined = tape.concat(&pieces, 2)?;
        let rows = tape.permute(joined, &[0, 2, 1])?;
        tape.reshape(rows, &[b, c, self.pattern_dim, d])
    }
}

/// Left-pads `[N, 1, L]` by replicating the first value up to a multiple of
/// `r`, then embeds each patch with a stride-`r` convolution. In overlap mode
/// the unpadded series is convolved with stride 1 and the last `ceil(L/r)`
/// positions are kept.
pub fn multi_resolution_patch(
    tape: &mut Tape,
    series: Var,
    weight: Var,
    bias: Var,
    r: usize,
    overlap: bool,
) -> Result<Var> {
    let l = *tape.value(series).shape().last().unwrap();
    if r == 0 || r > l {
        return Err(Error::Config(format!(
            "resolution {r} exceeds lookback {l}"
        )));
    }
    let keep = l.div_ceil(r);
    if overlap {
        let full = tape.conv1d(series, weight, bias, 1, 1)?;
        let len = l - r + 1;
        let axis = tape.value(full).rank() - 1;
        tape.narrow(full, axis, len - keep, keep)
    } else {
        let padded = tape.pad_left_replicate(series, keep * r - l)?;
        tape.conv1d(padded, weight, bias, r, 1)
    }
}

/// Dilated `D -> D` convolution over the patched sequence, truncated to the
/// last `floor(period/r)` positions: `[N, D, L_r] -> [N, D, floor(period/r)]`.
pub fn periodic_pattern_mine(
    tape: &mut Tape,
    patched: Var,
    weight: Var,
    bias: Var,
    pair: &PatternPair,
) -> Result<Var> {
    let lr = *tape.value(patched).shape().last().unwrap();
    let span = (pair.kernel - 1) * pair.dilation + 1;
    if lr < span {
        return Err(Error::Config(format!(
            "(period {}, resolution {}): receptive field {span} exceeds patched length {lr}",
            pair.period, pair.resolution
        )));
    }
    let raw = tape.conv1d(patched, weight, bias, 1, pair.dilation)?;
    let axis = tape.value(raw).rank() - 1;
    let len = tape.value(raw).shape()[axis];
    tape.narrow(raw, axis, len - pair.dilation, pair.dilation)
}

/// `pattern[.., c, p, d] * sigmoid(embedding[c, p])`.
pub fn channel_adapt(tape: &mut Tape, pattern: Var, embedding: Var) -> Result<Var> {
    let gate = tape.sigmoid(embedding);
    let es = tape.value(embedding).shape().to_vec();
    if es.len() != 2 {
        return Err(Error::Argument(format!(
            "embedding must be [C, P], got {es:?}"
        )));
    }
    let gate = tape.reshape(gate, &[es[0], es[1], 1])?;
    tape.broadcast_mul(pattern, gate)
}

impl Forecaster for Mppn {
    fn lookback(&self) -> usize {
        self.config.lookback
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let (b, _, c) = input_dims(tape, x, self.config.lookback, Some(self.config.channels))?;
        let pattern = self.assemble_patterns(tape, params, x)?;
        let adapted = channel_adapt(tape, pattern, params[self.embedding])?;
        let flat = tape.reshape(adapted, &[b, c, self.pattern_dim * self.config.d_model])?;
        let out = tape.linear(flat, params[self.out_weight], params[self.out_bias])?;
        tape.permute(out, &[0, 2, 1])
    }
}

/// Per-channel gate values `sigmoid(E)` with channel names.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMatrix {
    pub channels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl GateMatrix {
    pub fn from_model(model: &Mppn, names: &[String]) -> Result<Self> {
        let e = &model.params.tensors()[model.embedding];
        let [c, p] = *e.shape() else { unreachable!() };
        if names.len() != c {
            return Err(Error::dim("gates", 0, c, names.len()));
        }
        let values = e
            .data()
            .chunks(p)
            .map(|row| row.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect())
            .collect();
        Ok(GateMatrix {
            channels: names.to_vec(),
            values,
        })
    }

    /// CSV with header `channel,p0,p1,...` and one row per channel.
    pub fn to_csv(&self) -> String {
        let p = self.values.first().map_or(0, Vec::len);
        let mut out = String::from("channel");
        for i in 0..p {
            out.push_str(&format!(",p{i}"));
        }
        out.push('\n');
        for (name, row) in self.channels.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::Data(
                "gate CSV needs a channel column and at least one slot".into(),
            ));
        }
        let mut channels = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            channels.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Data(format!("bad gate value `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        Ok(GateMatrix { channels, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(periods: Vec<usize>, resolutions: Vec<usize>, lookback: usize) -> MppnConfig {
        MppnConfig {
            lookback,
            horizon: 4,
            channels: 2,
            d_model: 3,
            resolutions,
            periods,
            overlap: false,
            seed: 1,
        }
    }

    #[test]
    fn pattern_dim_arithmetic() {
        assert_eq!(
            pattern_dim(&cfg(vec![24, 12], vec![1, 3, 4, 6], 336)).unwrap(),
            63
        );
        assert_eq!(pattern_dim(&cfg(vec![24], vec![1], 336)).unwrap(), 24);
        let c = cfg(vec![24], vec![1, 3, 4, 6], 336);
        assert_eq!(pattern_dim(&c).unwrap(), 42);
        assert_eq!(c.pattern_pairs().unwrap().len(), 4);
    }

    #[test]
    fn oversized_periods_are_skipped() {
        let c = cfg(vec![500, 24], vec![1, 48], 336);
        let pairs = c.pattern_pairs().unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].period, 24);
        assert!(matches!(
            pattern_dim(&cfg(vec![500], vec![1], 336)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            pattern_dim(&cfg(vec![24], vec![400], 336)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn patch_lengths() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 336]));
        let w = tape.constant(Tensor::zeros(&[5, 1, 4]));
        let b = tape.constant(Tensor::zeros(&[5]));
        let y = multi_resolution_patch(&mut tape, x, w, b, 4, false).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 5, 84]);
        let w1 = tape.constant(Tensor::zeros(&[5, 1, 1]));
        let y = multi_resolution_patch(&mut tape, x, w1, b, 1, false).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 5, 336]);
        let y = multi_resolution_patch(&mut tape, x, w, b, 4, true).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 5, 84]);
        assert!(matches!(
            multi_resolution_patch(&mut tape, x, w, b, 400, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn padding_replicates_oldest_value() {
        // L = 5, r = 2: padded to 6 with x[0] in front; a summing kernel then
        // sees (x0 + x0), (x1 + x2), (x3 + x4).
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 5], vec![1., 2., 3., 4., 5.]).unwrap());
        let w = tape.constant(Tensor::new(&[1, 1, 2], vec![1., 1.]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = multi_resolution_patch(&mut tape, x, w, b, 2, false).unwrap();
        assert_eq!(tape.value(y).data(), &[2., 5., 9.]);
    }

    #[test]
    fn gates_csv_round_trip() {
        let g = GateMatrix {
            channels: vec!["a".into(), "b".into()],
            values: vec![vec![0.5, 0.123_456_789_012_345_68], vec![1.0 / 3.0, 0.999]],
        };
        let text = g.to_csv();
        assert!(text.starts_with("channel,p0,p1\n"));
        assert_eq!(GateMatrix::from_csv(&text).unwrap(), g);
    }

    #[test]
    fn untrained_gates_are_half() {
        let m = Mppn::new(cfg(vec![6], vec![1, 2], 24)).unwrap();
        let g = GateMatrix::from_model(&m, &["x".into(), "y".into()]).unwrap();
        assert!(g.values.iter().flatten().all(|&v| v == 0.5));
        assert_eq!(g.values[0].len(), 9);
    }
}
