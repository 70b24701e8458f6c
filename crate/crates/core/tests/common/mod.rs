#![allow(dead_code)]

use mppn_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub const FD_STEP: f64 = 1e-6;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss_value(
    inputs: &[Tensor],
    target: &Tensor,
    f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let t = tape.constant(target.clone());
    let loss = tape.mse_loss(out, t).unwrap();
    tape.value(loss).item().unwrap()
}

/// Largest elementwise relative error between the tape gradient and central
/// differences of `mse(f(inputs), target)` over every input element. The
/// denominator is floored at 1e-3 so near-zero components are compared
/// absolutely.
pub fn max_grad_error(
    inputs: &[Tensor],
    seed: u64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let target = random_tensor(tape.value(out).shape(), seed);
    let tv = tape.constant(target.clone());
    let loss = tape.mse_loss(out, tv).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = loss_value(&probe, &target, &f);
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = loss_value(&probe, &target, &f);
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

pub const OP_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;

pub type GradCase = (&'static str, fn() -> f64);

/// One finite-difference case per tape operation and configuration.
pub fn op_cases() -> Vec<GradCase> {
    vec![
        ("conv1d", || {
            let ins = [
                random_tensor(&[2, 11], 1),
                random_tensor(&[3, 2, 3], 2),
                random_tensor(&[3], 3),
            ];
            max_grad_error(&ins, 4, |t, v| t.conv1d(v[0], v[1], v[2], 1, 1))
        }),
        ("conv1d_stride_dilation_batched", || {
            let ins = [
                random_tensor(&[2, 2, 17], 5),
                random_tensor(&[3, 2, 3], 6),
                random_tensor(&[3], 7),
            ];
            max_grad_error(&ins, 8, |t, v| t.conv1d(v[0], v[1], v[2], 2, 3))
        }),
        ("conv1d_patch_stride", || {
            let ins = [
                random_tensor(&[3, 1, 12], 9),
                random_tensor(&[4, 1, 3], 10),
                random_tensor(&[4], 11),
            ];
            max_grad_error(&ins, 12, |t, v| t.conv1d(v[0], v[1], v[2], 3, 1))
        }),
        ("linear", || {
            let ins = [
                random_tensor(&[2, 3, 5], 13),
                random_tensor(&[5, 4], 14),
                random_tensor(&[4], 15),
            ];
            max_grad_error(&ins, 16, |t, v| t.linear(v[0], v[1], v[2]))
        }),
        ("sigmoid", || {
            let mut x = random_tensor(&[3, 4], 17);
            x.data_mut().iter_mut().for_each(|v| *v *= 6.0);
            max_grad_error(&[x], 18, |t, v| Ok(t.sigmoid(v[0])))
        }),
        ("concat", || {
            let ins = [
                random_tensor(&[2, 3, 2], 19),
                random_tensor(&[2, 1, 2], 20),
                random_tensor(&[2, 4, 2], 21),
            ];
            max_grad_error(&ins, 22, |t, v| t.concat(v, 1))
        }),
        ("broadcast_mul", || {
            let ins = [
                random_tensor(&[2, 3, 4, 5], 23),
                random_tensor(&[3, 4, 1], 24),
            ];
            max_grad_error(&ins, 25, |t, v| t.broadcast_mul(v[0], v[1]))
        }),
        ("mse_loss", || {
            let ins = [random_tensor(&[3, 4], 26), random_tensor(&[3, 4], 27)];
            max_grad_error(&ins, 28, |t, v| {
                let l = t.mse_loss(v[0], v[1])?;
                t.reshape(l, &[1])
            })
        }),
        ("sum", || {
            let ins = [random_tensor(&[2, 5], 29)];
            max_grad_error(&ins, 30, |t, v| {
                let s = t.sum(v[0]);
                t.reshape(s, &[1])
            })
        }),
        ("add_sub", || {
            let ins = [
                random_tensor(&[4, 3], 31),
                random_tensor(&[4, 3], 32),
                random_tensor(&[4, 3], 33),
            ];
            max_grad_error(&ins, 34, |t, v| {
                let a = t.add(v[0], v[1])?;
                t.sub(a, v[2])
            })
        }),
        ("pad_left_replicate", || {
            let ins = [random_tensor(&[2, 1, 5], 35)];
            max_grad_error(&ins, 36, |t, v| t.pad_left_replicate(v[0], 3))
        }),
        ("narrow", || {
            let ins = [random_tensor(&[3, 6, 2], 37)];
            max_grad_error(&ins, 38, |t, v| t.narrow(v[0], 1, 2, 3))
        }),
        ("permute", || {
            let ins = [random_tensor(&[2, 3, 4], 39)];
            max_grad_error(&ins, 40, |t, v| t.permute(v[0], &[2, 0, 1]))
        }),
        ("reshape", || {
            let ins = [random_tensor(&[2, 3, 4], 41)];
            max_grad_error(&ins, 42, |t, v| t.reshape(v[0], &[6, 4]))
        }),
        ("fan_out", || {
            let ins = [random_tensor(&[3, 4], 43)];
            max_grad_error(&ins, 44, |t, v| {
                let s = t.sigmoid(v[0]);
                let a = t.add(s, v[0])?;
                let b = t.sub(a, s)?;
                t.add(b, s)
            })
        }),
    ]
}

/// The smallest sensible MPPN: `L=24, H=4, C=2, D=3`, period 6, resolutions 1 and 2.
pub fn tiny_mppn(overlap: bool) -> mppn_core::Mppn {
    mppn_core::Mppn::new(mppn_core::MppnConfig {
        lookback: 24,
        horizon: 4,
        channels: 2,
        d_model: 3,
        resolutions: vec![1, 2],
        periods: vec![6],
        overlap,
        seed: 3,
    })
    .unwrap()
}

/// Gradient error of the tiny MPPN with respect to every parameter and the input.
pub fn end_to_end_error(overlap: bool) -> f64 {
    use mppn_core::Forecaster;
    let mut model = tiny_mppn(overlap);
    let mut embedding = random_tensor(&[2, model.pattern_dim()], 45);
    embedding.data_mut().iter_mut().for_each(|v| *v *= 2.0);
    *model.params_mut().get_mut("channel.embedding").unwrap() = embedding;
    let mut inputs: Vec<Tensor> = model.params().tensors().to_vec();
    for (i, t) in inputs.iter_mut().enumerate() {
        if t.data().iter().all(|&v| v == 0.0) {
            *t = random_tensor(t.shape(), 100 + i as u64);
            t.data_mut().iter_mut().for_each(|v| *v *= 0.1);
        }
    }
    inputs.push(random_tensor(&[2, 24, 2], 46));
    let n = inputs.len();
    max_grad_error(&inputs, 47, |t, v| model.forward(t, &v[..n - 1], v[n - 1]))
}
