//! Entropy-rate predictability of discretized series.
//!
//! A series is binned into `Q` symbols, its entropy rate is estimated from
//! Lempel-Ziv match lengths, and Fano's inequality turns that rate into an
//! upper bound on achievable prediction accuracy.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    #[default]
    EqualFrequency,
    EqualWidth,
}

impl fmt::Display for Binning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Binning::EqualFrequency => "equal-frequency",
            Binning::EqualWidth => "equal-width",
        })
    }
}

impl FromStr for Binning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-frequency" | "quantile" => Ok(Binning::EqualFrequency),
            "equal-width" | "uniform" => Ok(Binning::EqualWidth),
            other => Err(Error::Argument(format!("unknown binning mode `{other}`"))),
        }
    }
}

/// Integer symbol sequence over the alphabet `[0, q)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteSeries {
    symbols: Vec<u32>,
    q: u32,
}

impl DiscreteSeries {
    pub fn new(symbols: Vec<u32>, q: u32) -> Result<Self> {
        if let Some(bad) = symbols.iter().find(|&&s| s >= q) {
            return Err(Error::Argument(format!(
                "symbol {bad} outside alphabet of size {q}"
            )));
        }
        Ok(DiscreteSeries { symbols, q })
    }

    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn alphabet(&self) -> u32 {
        self.q
    }

    /// Number of distinct symbols that actually occur.
    pub fn distinct(&self) -> usize {
        let mut seen = vec![false; self.q as usize];
        for &s in &self.symbols {
            seen[s as usize] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }
}

pub fn discretize(series: &[f64], q: usize, mode: Binning) -> Result<DiscreteSeries> {
    if q < 2 {
        return Err(Error::Argument(format!("need at least 2 bins, got {q}")));
    }
    if q > u32::MAX as usize {
        return Err(Error::Argument(format!("too many bins: {q}")));
    }
    if series.len() < 2 {
        return Err(Error::Argument(
            "need at least 2 samples to discretize".into(),
        ));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at index {i}")));
    }
    let symbols = match mode {
        Binning::EqualFrequency => {
            let mut sorted = series.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            // Upper edge of bin k-1 is the ceil(k n / q)-th smallest value; a value
            // equal to an edge stays in the lower bin.
            let edges: Vec<f64> = (1..q).map(|k| sorted[(k * n).div_ceil(q) - 1]).collect();
            series
                .iter()
                .map(|&x| edges.partition_point(|&e| e < x) as u32)
                .collect()
        }
        Binning::EqualWidth => {
            let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                vec![0; series.len()]
            } else {
                series
                    .iter()
                    .map(|&x| {
                        (((x - lo) / (hi - lo) * q as f64).floor() as usize).min(q - 1) as u32
                    })
                    .collect()
            }
        }
    };
    DiscreteSeries::new(symbols, q as u32)
}

/// Match lengths `Λ_i` (0-based positions): one more than the longest prefix of
/// `s[i..]` that also starts at some earlier position `j < i`. When the match
/// runs to the end of the sequence the length is `n - i + 1`.
pub fn match_lengths(s: &[u32]) -> Vec<usize> {
    let n = s.len();
    if n == 0 {
        return Vec::new();
    }
    let sa = suffix_array(s);
    let mut rank = vec![0usize; n];
    for (r, &p) in sa.iter().enumerate() {
        rank[p] = r;
    }
    let lcp = lcp_array(s, &sa, &rank);
    let rmq = SparseMin::new(&lcp);
    // lcp[r] = LCP(sa[r-1], sa[r]); LCP of ranks a < b is min(lcp[a+1..=b]).
    let lcp_between = |a: usize, b: usize| rmq.min(a + 1, b);

    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    for &r in &rank {
        let before = seen.range(..r).next_back().map(|&a| lcp_between(a, r));
        let after = seen.range(r + 1..).next().map(|&b| lcp_between(r, b));
        let longest = before.unwrap_or(0).max(after.unwrap_or(0));
        out.push(longest + 1);
        seen.insert(r);
    }
    out
}

/// Lempel-Ziv entropy-rate estimate in bits per symbol.
pub fn lz_entropy_rate(d: &DiscreteSeries) -> Result<f64> {
    let n = d.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "entropy rate needs n >= 2, got {n}"
        )));
    }
    let total: usize = match_lengths(d.symbols()).iter().sum();
    let nats = (n as f64).ln() / (total as f64 / n as f64);
    Ok(nats / std::f64::consts::LN_2)
}

fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// `H(p) + (1 - p) log2(n - 1)`: the Fano right-hand side.
pub fn fano_rhs(p: f64, n: usize) -> f64 {
    let tail = if n > 2 {
        (1.0 - p) * ((n - 1) as f64).log2()
    } else {
        0.0
    };
    binary_entropy(p) + tail
}

/// Result of solving the Fano equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FanoSolution {
    pub pi_max: f64,
    /// Set when `S` lay outside `[0, log2 N]` and was clamped.
    pub clamped: bool,
}

/// Largest accuracy `Π ∈ [1/N, 1]` with `S = H(Π) + (1 - Π) log2(N - 1)`.
pub fn fano_upper_bound(s_bits: f64, n: usize) -> Result<FanoSolution> {
    if n < 1 {
        return Err(Error::Argument("alphabet size must be >= 1".into()));
    }
    if s_bits.is_nan() {
        return Err(Error::Argument("entropy rate is NaN".into()));
    }
    if n == 1 {
        return Ok(FanoSolution {
            pi_max: 1.0,
            clamped: false,
        });
    }
    let max_s = (n as f64).log2();
    let clamped = !(0.0..=max_s).contains(&s_bits);
    let s = s_bits.clamp(0.0, max_s);
    let floor = 1.0 / n as f64;
    if s >= max_s.min(fano_rhs(floor, n)) {
        return Ok(FanoSolution {
            pi_max: floor,
            clamped,
        });
    }
    if s <= 0.0 {
        return Ok(FanoSolution {
            pi_max: 1.0,
            clamped,
        });
    }
    // fano_rhs decreases from log2 N at 1/N to 0 at 1.
    let (mut lo, mut hi) = (floor, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fano_rhs(mid, n) > s {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let pi = if (fano_rhs(lo, n) - s).abs() <= (fano_rhs(hi, n) - s).abs() {
        lo
    } else {
        hi
    };
    Ok(FanoSolution {
        pi_max: pi,
        clamped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariatePredictability {
    pub name: String,
    #[serde(rename = "S_bits")]
    pub s_bits: f64,
    pub pi_max: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityReport {
    pub variates: Vec<VariatePredictability>,
    pub mean_pi_max: f64,
    #[serde(rename = "Q")]
    pub q: usize,
    pub mode: Binning,
}

pub fn series_predictability(
    name: &str,
    series: &[f64],
    q: usize,
    mode: Binning,
) -> Result<VariatePredictability> {
    let d = discretize(series, q, mode)?;
    let s_bits = lz_entropy_rate(&d)?;
    let n = d.distinct();
    let sol = fano_upper_bound(s_bits, n)?;
    if sol.clamped {
        log::warn!("variate {name}: entropy rate {s_bits:.4} bits clamped into [0, log2 {n}]");
    }
    Ok(VariatePredictability {
        name: name.to_string(),
        s_bits,
        pi_max: sol.pi_max,
        n,
    })
}

/// Per-variate predictability over the raw series, averaged over variates.
pub fn dataset_predictability(
    dataset: &SeriesDataset,
    q: usize,
    mode: Binning,
) -> Result<PredictabilityReport> {
    if dataset.channels() == 0 || dataset.len() < 2 {
        return Err(Error::Data("dataset has no usable variates".into()));
    }
    let variates = (0..dataset.channels())
        .map(|c| series_predictability(&dataset.names()[c], &dataset.column(c), q, mode))
        .collect::<Result<Vec<_>>>()?;
    let mean_pi_max = variates.iter().map(|v| v.pi_max).sum::<f64>() / variates.len() as f64;
    Ok(PredictabilityReport {
        variates,
        mean_pi_max,
        q,
        mode,
    })
}

/// Prefix-doubling suffix array.
fn suffix_array(s: &[u32]) -> Vec<usize> {
    let n = s.len();
    let mut sa: Vec<usize> = (0..n).collect();
    let mut rank: Vec<usize> = s.iter().map(|&c| c as usize).collect();
    let mut tmp = vec![0usize; n];
    let mut k = 1;
    loop {
        let key = |i: usize| (rank[i], if i + k < n { rank[i + k] + 1 } else { 0 });
        sa.sort_unstable_by_key(|&i| key(i));
        tmp[sa[0]] = 0;
        for w in 1..n {
            tmp[sa[w]] = tmp[sa[w - 1]] + usize::from(key(sa[w - 1]) != key(sa[w]));
        }
        std::mem::swap(&mut rank, &mut tmp);
        if rank[sa[n - 1]] == n - 1 || k >= n {
            break;
        }
        k *= 2;
    }
    sa
}

/// Kasai LCP: `lcp[r]` is the common prefix of suffixes at ranks `r-1` and `r`.
fn lcp_array(s: &[u32], sa: &[usize], rank: &[usize]) -> Vec<usize> {
    let n = s.len();
    let mut lcp = vec![0usize; n];
    let mut h = 0usize;
    for i in 0..n {
        if rank[i] == 0 {
            h = 0;
            continue;
        }
        let j = sa[rank[i] - 1];
        while i + h < n && j + h < n && s[i + h] == s[j + h] {
            h += 1;
        }
        lcp[rank[i]] = h;
        h = h.saturating_sub(1);
    }
    lcp
}

struct SparseMin {
    table: Vec<Vec<usize>>,
}

impl SparseMin {
    fn new(v: &[usize]) -> Self {
        let mut table = vec![v.to_vec()];
        let mut width = 1;
        while 2 * width <= v.len() {
            let prev = table.last().unwrap();
            let next = (0..=v.len() - 2 * width)
                .map(|i| prev[i].min(prev[i + width]))
                .collect();
            table.push(next);
            width *= 2;
        }
        SparseMin { table }
    }

    /// Minimum over the inclusive range `[lo, hi]`.
    fn min(&self, lo: usize, hi: usize) -> usize {
        let level = (usize::BITS - 1 - (hi - lo + 1).leading_zeros()) as usize;
        self.table[level][lo].min(self.table[level][hi + 1 - (1 << level)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_is_one_symbol() {
        for mode in [Binning::EqualFrequency, Binning::EqualWidth] {
            let d = discretize(&[4.2; 9], 7, mode).unwrap();
            assert!(d.symbols().iter().all(|&s| s == 0));
            assert_eq!(d.distinct(), 1);
        }
    }

    #[test]
    fn median_split() {
        let d = discretize(&[1., 2., 3., 4.], 2, Binning::EqualFrequency).unwrap();
        assert_eq!(d.symbols(), &[0, 0, 1, 1]);
        let d = discretize(&[4., 1., 3., 2.], 2, Binning::EqualFrequency).unwrap();
        assert_eq!(d.symbols(), &[1, 0, 1, 0]);
    }

    #[test]
    fn equal_width_bins() {
        let d = discretize(&[0., 0.26, 0.5, 0.99, 1.0], 4, Binning::EqualWidth).unwrap();
        assert_eq!(d.symbols(), &[0, 1, 2, 3, 3]);
    }

    #[test]
    fn discretize_errors() {
        assert!(matches!(
            discretize(&[1., 2.], 1, Binning::EqualFrequency),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            discretize(&[1., f64::NAN], 3, Binning::EqualFrequency),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn all_distinct_has_unit_match_lengths() {
        let n = 50;
        let d = DiscreteSeries::new((0..n).collect(), n).unwrap();
        assert!(match_lengths(d.symbols()).iter().all(|&l| l == 1));
        let s = lz_entropy_rate(&d).unwrap();
        assert!((s - (n as f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn alternating_sequence_lengths() {
        // i=0: nothing before -> 1; i=1: '1' unseen -> 1; i>=2 the suffix
        // repeats from i-2 up to the end -> n - i + 1.
        let s = [0, 1, 0, 1, 0, 1, 0, 1];
        assert_eq!(match_lengths(&s), vec![1, 1, 7, 6, 5, 4, 3, 2]);
    }

    #[test]
    fn fano_reference_points() {
        assert!((fano_upper_bound(1.0, 2).unwrap().pi_max - 0.5).abs() < 1e-12);
        assert!((fano_upper_bound(1e-9, 5).unwrap().pi_max - 1.0).abs() < 1e-6);
        assert_eq!(fano_upper_bound(0.3, 1).unwrap().pi_max, 1.0);
        for n in 2..=64 {
            let p = fano_upper_bound((n as f64).log2(), n).unwrap().pi_max;
            assert_eq!(p, 1.0 / n as f64);
        }
        assert!(fano_upper_bound(1.0, 0).is_err());
        assert!(fano_upper_bound(9.0, 4).unwrap().clamped);
    }

    #[test]
    fn fano_residual_is_tight() {
        for n in [2usize, 3, 8, 50] {
            for k in 1..40 {
                let s = (n as f64).log2() * k as f64 / 40.0;
                let p = fano_upper_bound(s, n).unwrap().pi_max;
                assert!((fano_rhs(p, n) - s).abs() <= 1e-10, "n={n} s={s}");
            }
        }
    }
}
