mod common;

use common::random_tensor;
use mppn_core::baselines::{moving_average_decompose, naive_last, DLinear, NLinear};
use mppn_core::data::{chronological_split, window_origins, Split, SplitScheme, Windows};
use mppn_core::mppn::{channel_adapt, pattern_dim};
use mppn_core::{Forecaster, Mppn, MppnConfig, SeriesDataset, Tape, Tensor};
use proptest::prelude::*;

fn double_sum(periods: &[usize], resolutions: &[usize]) -> usize {
    periods
        .iter()
        .map(|p| resolutions.iter().map(|r| p / r).sum::<usize>())
        .sum()
}

/// Moves channel `perm[c]` of a `[B, T, C]` tensor to position `c`.
fn permute_channels(x: &Tensor, perm: &[usize]) -> Tensor {
    let c = perm.len();
    let data = x
        .data()
        .chunks(c)
        .flat_map(|row| perm.iter().map(move |&p| row[p]))
        .collect();
    Tensor::new(x.shape(), data).unwrap()
}

fn mppn_strategy() -> impl Strategy<Value = (MppnConfig, usize)> {
    (8usize..400)
        .prop_flat_map(|l| {
            (
                Just(l),
                1usize..40,
                1usize..4,
                prop::collection::vec(2usize..=l, 1..4),
                prop::collection::vec(1usize..=l.min(12), 1..5),
                any::<bool>(),
                any::<u64>(),
                1usize..3,
            )
        })
        .prop_map(|(l, h, c, periods, mut resolutions, overlap, seed, b)| {
            resolutions.sort_unstable();
            resolutions.dedup();
            let config = MppnConfig {
                lookback: l,
                horizon: h,
                channels: c,
                d_model: 2,
                resolutions,
                periods,
                overlap,
                seed,
            };
            (config, b)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pattern_dim_is_the_double_sum_and_shapes_hold((config, b) in mppn_strategy()) {
        let expected = double_sum(&config.periods, &config.resolutions);
        match pattern_dim(&config) {
            Ok(p) => {
                prop_assert_eq!(p, expected);
                let model = Mppn::new(config.clone()).unwrap();
                let x = random_tensor(&[b, config.lookback, config.channels], config.seed);
                let mut tape = Tape::new();
                let vars: Vec<_> = model.params().tensors().iter().map(|t| tape.constant(t.clone())).collect();
                let xv = tape.constant(x.clone());
                let pattern = model.assemble_patterns(&mut tape, &vars, xv).unwrap();
                prop_assert_eq!(tape.value(pattern).shape(), &[b, config.channels, p, config.d_model]);
                let y = model.predict(&x).unwrap();
                prop_assert_eq!(y.shape(), &[b, config.horizon, config.channels]);
                prop_assert!(y.is_finite());
            }
            Err(_) => prop_assert_eq!(expected, 0),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mppn_is_channel_permutation_equivariant(seed in any::<u64>(), c in 2usize..5, rot in 1usize..4) {
        let config = MppnConfig {
            lookback: 48,
            horizon: 6,
            channels: c,
            d_model: 4,
            resolutions: vec![1, 3, 4],
            periods: vec![12, 8],
            overlap: seed % 2 == 0,
            seed,
        };
        let mut model = Mppn::new(config).unwrap();
        let p = model.pattern_dim();
        let emb = random_tensor(&[c, p], seed ^ 1);
        *model.params_mut().get_mut("channel.embedding").unwrap() = emb.clone();
        let x = random_tensor(&[2, 48, c], seed ^ 2);
        let y = model.predict(&x).unwrap();

        let perm: Vec<usize> = (0..c).map(|i| (i + rot) % c).collect();
        let emb_perm: Vec<f64> = perm.iter().flat_map(|&src| emb.data()[src * p..(src + 1) * p].to_vec()).collect();
        *model.params_mut().get_mut("channel.embedding").unwrap() = Tensor::new(&[c, p], emb_perm).unwrap();
        let y_perm = model.predict(&permute_channels(&x, &perm)).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&y_perm), bits(&permute_channels(&y, &perm)));
    }

    #[test]
    fn nlinear_shift_invariance(seed in any::<u64>(), shift in -1000i32..1000) {
        let mut model = NLinear::new(16, 5, seed);
        // Dyadic weights with integer inputs and shifts keep every sum exact.
        for t in model.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = (*v * 8.0).round() / 8.0);
        }
        let x = Tensor::new(
            &[2, 16, 3],
            random_tensor(&[2, 16, 3], seed).data().iter().map(|v| (v * 50.0).round()).collect(),
        ).unwrap();
        let shifted = Tensor::new(x.shape(), x.data().iter().map(|v| v + f64::from(shift)).collect()).unwrap();
        let y = model.predict(&x).unwrap();
        let ys = model.predict(&shifted).unwrap();
        for (a, b) in y.data().iter().zip(ys.data()) {
            prop_assert_eq!((a + f64::from(shift)).to_bits(), b.to_bits());
        }

        let xf = random_tensor(&[1, 16, 2], seed ^ 7);
        let xfs = Tensor::new(xf.shape(), xf.data().iter().map(|v| v + 0.37).collect()).unwrap();
        let (a, b) = (model.predict(&xf).unwrap(), model.predict(&xfs).unwrap());
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u + 0.37 - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn decomposition_sums_back(seed in any::<u64>(), l in 5usize..60, half in 1usize..30) {
        let m = (2 * half + 1).min(2 * l - 1);
        let x = random_tensor(&[l, 2], seed);
        let (trend, seasonal) = moving_average_decompose(&x, m).unwrap();
        for ((t, s), v) in trend.data().iter().zip(seasonal.data()).zip(x.data()) {
            prop_assert!((t + s - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn windows_stay_inside_their_split(t in 40usize..600, l in 1usize..30, h in 1usize..20, ett in any::<bool>()) {
        let scheme = if ett { SplitScheme::Ett } else { SplitScheme::Standard };
        let Ok(bounds) = chronological_split(t, scheme, l, h) else {
            // Rejected only when some split cannot hold a window.
            let short = [Split::Train, Split::Val, Split::Test].iter().any(|&s| {
                let (train_end, val_end) = if ett { (t * 6 / 10, t * 8 / 10) } else { (t * 7 / 10, t * 8 / 10) };
                let r = match s { Split::Train => 0..train_end, Split::Val => train_end..val_end, Split::Test => val_end..t };
                r.end < h || r.start.max(l) + h > r.end
            });
            prop_assert!(short);
            return Ok(());
        };
        let values: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let ds = SeriesDataset::new(vec!["i".into()], values, None).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            let range = bounds.range(split);
            let origins = window_origins(&bounds, split, l, h).unwrap();
            prop_assert!(!origins.is_empty());
            let windows = Windows::new(&ds, &bounds, split, l, h).unwrap();
            for batch in windows.batches(7) {
                for (k, &o) in batch.origins.iter().enumerate() {
                    prop_assert!(o >= l && o >= range.start && o + h <= range.end);
                    prop_assert_eq!(batch.inputs.data()[k * l], (o - l) as f64);
                    prop_assert_eq!(batch.targets.data()[k * h], o as f64);
                    prop_assert_eq!(batch.targets.data()[k * h + h - 1], (o + h - 1) as f64);
                }
            }
        }
    }
}

#[test]
fn zero_embedding_gates_scale_by_exactly_half() {
    let pattern = random_tensor(&[2, 3, 5, 4], 1);
    let mut tape = Tape::new();
    let pv = tape.constant(pattern.clone());
    let ev = tape.constant(Tensor::zeros(&[3, 5]));
    let out = channel_adapt(&mut tape, pv, ev).unwrap();
    let expected: Vec<f64> = pattern.data().iter().map(|v| v * 0.5).collect();
    assert_eq!(tape.value(out).data(), expected.as_slice());
}

#[test]
fn fresh_mppn_gates_are_one_half() {
    let model = common::tiny_mppn(false);
    let gates = mppn_core::mppn::GateMatrix::from_model(&model, &["a".into(), "b".into()]).unwrap();
    assert!(gates.values.iter().flatten().all(|&g| g == 0.5));
    let back = mppn_core::mppn::GateMatrix::from_csv(&gates.to_csv()).unwrap();
    assert_eq!(back, gates);
}

#[test]
fn default_configuration_pattern_dim() {
    let config = MppnConfig {
        channels: 7,
        periods: vec![24, 12],
        ..MppnConfig::default()
    };
    assert_eq!(
        pattern_dim(&config).unwrap(),
        double_sum(&[24, 12], &[1, 3, 4, 6])
    );
}

#[test]
fn baselines_on_constant_series() {
    let x = Tensor::full(&[1, 30, 2], 3.25);
    let naive = naive_last(&Tensor::full(&[30, 2], 3.25), 7).unwrap();
    assert!(naive.data().iter().all(|&v| v == 3.25));
    let mut nl = NLinear::new(30, 7, 1);
    nl.params_mut()
        .get_mut("linear.bias")
        .unwrap()
        .data_mut()
        .fill(0.0);
    let y = nl.predict(&x).unwrap();
    assert!(y.data().iter().all(|&v| v == 3.25));
    let dl = DLinear::new(30, 7, 25, 1).unwrap();
    assert_eq!(dl.predict(&x).unwrap().shape(), &[1, 7, 2]);
}
