use super::{strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        dilation: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Sigmoid(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    BroadcastMul {
        a: Var,
        gate: Var,
    },
    MseLoss {
        pred: Var,
        target: Var,
    },
    Sum(Var),
    Add(Var, Var),
    Sub(Var, Var),
    PadLeft {
        x: Var,
        amount: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Records operations in creation order and replays them in reverse.
///
/// Nodes are only ever appended, so creation order is a topological order of
/// the graph. A tape is built for one forward pass and dropped afterwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that is treated as data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last `backward`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 1-D convolution without padding.
    ///
    /// `input` is `[Cin, Lin]` or batched `[N, Cin, Lin]`, `weight` is
    /// `[Cout, Cin, K]` and `bias` is `[Cout]`. The output has length
    /// `(Lin - (K-1)*dilation - 1) / stride + 1`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        if stride == 0 || dilation == 0 {
            return Err(Error::Argument(
                "conv1d stride and dilation must be >= 1".into(),
            ));
        }
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (n, cin, lin, batched) = match x.shape() {
            [c, l] => (1, *c, *l, false),
            [n, c, l] => (*n, *c, *l, true),
            _ => {
                return Err(Error::Argument(format!(
                    "conv1d input must be rank 2 or 3, got {:?}",
                    x.shape()
                )))
            }
        };
        let [cout, wcin, k] = *w.shape() else {
            return Err(Error::Argument(format!(
                "conv1d weight must be rank 3, got {:?}",
                w.shape()
            )));
        };
        if wcin != cin {
            return Err(Error::dim("conv1d", 1, cin, wcin));
        }
        if b.shape() != [cout] {
            return Err(Error::dim(
                "conv1d",
                0,
                cout,
                b.shape().first().copied().unwrap_or(0),
            ));
        }
        let span = (k - 1) * dilation + 1;
        if lin < span {
            return Err(Error::Argument(format!(
                "conv1d receptive field {span} (kernel {k}, dilation {dilation}) exceeds input length {lin}"
            )));
        }
        let lout = (lin - span) / stride + 1;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![0.0; n * cout * lout];
        for s in 0..n {
            let xs = &xd[s * cin * lin..(s + 1) * cin * lin];
            for c in 0..cout {
                let os = &mut out[(s * cout + c) * lout..(s * cout + c + 1) * lout];
                os.fill(bd[c]);
                for i in 0..cin {
                    let xrow = &xs[i * lin..(i + 1) * lin];
                    for j in 0..k {
                        let wv = wd[(c * cin + i) * k + j];
                        let off = j * dilation;
                        if stride == 1 {
                            for (o, xv) in os.iter_mut().zip(&xrow[off..off + lout]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (t, o) in os.iter_mut().enumerate() {
                                *o += wv * xrow[t * stride + off];
                            }
                        }
                    }
                }
            }
        }
        let shape: Vec<usize> = if batched {
            vec![n, cout, lout]
        } else {
            vec![cout, lout]
        };
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            rg,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                dilation,
            },
        ))
    }

    /// Affine map over the last axis: `[..., F] x [F, G] + [G] -> [..., G]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let Some(&f) = x.shape().last() else {
            return Err(Error::Argument("linear input must have rank >= 1".into()));
        };
        let [wf, g] = *w.shape() else {
            return Err(Error::Argument(format!(
                "linear weight must be rank 2, got {:?}",
                w.shape()
            )));
        };
        if wf != f {
            return Err(Error::dim("linear", x.rank() - 1, wf, f));
        }
        if b.shape() != [g] {
            return Err(Error::dim(
                "linear",
                0,
                g,
                b.shape().first().copied().unwrap_or(0),
            ));
        }
        let m = x.numel() / f;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![0.0; m * g];
        for r in 0..m {
            let orow = &mut out[r * g..(r + 1) * g];
            orow.copy_from_slice(bd);
            for (p, &xv) in xd[r * f..(r + 1) * f].iter().enumerate() {
                for (o, wv) in orow.iter_mut().zip(&wd[p * g..(p + 1) * g]) {
                    *o += xv * wv;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = g;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            rg,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| stable_sigmoid(v)).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, rg, Op::Sigmoid(x))
    }

    /// Joins tensors along `axis`; every other extent must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Argument("concat needs at least one tensor".into()));
        };
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Argument(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != base.len() {
                return Err(Error::Argument(format!(
                    "concat rank mismatch: {:?} vs {:?}",
                    base, s
                )));
            }
            for (ax, (&a, &b)) in base.iter().zip(s).enumerate() {
                if ax != axis && a != b {
                    return Err(Error::dim("concat", ax, a, b));
                }
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.needs(inputs);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// `out[.., m, d] = a[.., m, d] * gate[m, 0]`.
    ///
    /// `gate` has shape `[C, P, 1]` (any rank ending in 1); its leading extents
    /// must equal the trailing extents of `a` just before the last axis. Any
    /// further leading axes of `a` are treated as batch.
    pub fn broadcast_mul(&mut self, a: Var, gate: Var) -> Result<Var> {
        let at = self.value(a);
        let gt = self.value(gate);
        let (ar, gr) = (at.rank(), gt.rank());
        if gr == 0 || gt.shape()[gr - 1] != 1 {
            return Err(Error::dim(
                "broadcast_mul",
                gr.saturating_sub(1),
                1,
                gt.shape().last().copied().unwrap_or(0),
            ));
        }
        if gr > ar {
            return Err(Error::Argument(format!(
                "gate {:?} has higher rank than {:?}",
                gt.shape(),
                at.shape()
            )));
        }
        for i in 0..gr - 1 {
            let ax = ar - gr + i;
            if at.shape()[ax] != gt.shape()[i] {
                return Err(Error::dim(
                    "broadcast_mul",
                    ax,
                    gt.shape()[i],
                    at.shape()[ax],
                ));
            }
        }
        let d = at.shape()[ar - 1];
        let m = gt.numel();
        let mut out = at.data().to_vec();
        for (row, chunk) in out.chunks_mut(d).enumerate() {
            let gv = gt.data()[row % m];
            for o in chunk {
                *o *= gv;
            }
        }
        let value = Tensor::new(at.shape(), out)?;
        let rg = self.needs(&[a, gate]);
        Ok(self.push(value, rg, Op::BroadcastMul { a, gate }))
    }

    /// Mean squared difference, as a rank-0 tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        check_same_shape("mse_loss", p, t)?;
        let n = p.numel() as f64;
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(sum / n), rg, Op::MseLoss { pred, target }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        check_same_shape("add", at, bt)?;
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(at.shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        check_same_shape("sub", at, bt)?;
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(at.shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    /// Prepends `amount` copies of each row's first element along the last axis.
    pub fn pad_left_replicate(&mut self, x: Var, amount: usize) -> Result<Var> {
        let t = self.value(x);
        let Some(&len) = t.shape().last() else {
            return Err(Error::Argument("pad needs rank >= 1".into()));
        };
        if amount == 0 {
            return Ok(x);
        }
        let rows = t.numel() / len;
        let mut out = Vec::with_capacity(rows * (len + amount));
        for row in t.data().chunks(len) {
            out.extend(std::iter::repeat_n(row[0], amount));
            out.extend_from_slice(row);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() += amount;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, rg, Op::PadLeft { x, amount }))
    }

    /// Slice `[start, start + len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Argument(format!(
                "narrow axis {axis} out of range for rank {}",
                t.rank()
            )));
        }
        let extent = t.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(Error::Argument(format!(
                "narrow [{start}, {}) out of range for axis {axis} of extent {extent}",
                start + len
            )));
        }
        if start == 0 && len == extent {
            return Ok(x);
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, rg, Op::Narrow { x, axis, start }))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.rank()];
        if perm.len() != t.rank()
            || perm
                .iter()
                .any(|&p| p >= t.rank() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Argument(format!(
                "{perm:?} is not a permutation of rank {}",
                t.rank()
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
        let out = permute_data(t.data(), t.shape(), perm);
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            rg,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Populates gradients of every `requires_grad` node reachable from `loss`.
    ///
    /// Gradients from earlier calls are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &upstream);
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.numel();
        let g = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn propagate(&mut self, idx: usize, up: &[f64]) {
        // The op is moved out so input nodes can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                dilation,
            } => self.conv1d_backward(idx, *input, *weight, *bias, *stride, *dilation, up),
            Op::Linear {
                input,
                weight,
                bias,
            } => self.linear_backward(*input, *weight, *bias, up),
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate(*x, |g| {
                    for ((gi, yi), ui) in g.iter_mut().zip(&y).zip(up) {
                        *gi += yi * (1.0 - yi) * ui;
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = self.nodes[idx].value.shape().to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.value(v).shape()[*axis] * inner;
                    self.accumulate(v, |g| {
                        for o in 0..outer {
                            let src = &up[o * total + offset..o * total + offset + chunk];
                            for (gi, ui) in g[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *gi += ui;
                            }
                        }
                    });
                    offset += chunk;
                }
            }
            Op::BroadcastMul { a, gate } => {
                let d = *self.value(*a).shape().last().unwrap();
                let gv = self.value(*gate).data().to_vec();
                let av = self.value(*a).data().to_vec();
                let m = gv.len();
                self.accumulate(*a, |g| {
                    for (row, (gc, uc)) in g.chunks_mut(d).zip(up.chunks(d)).enumerate() {
                        let s = gv[row % m];
                        for (gi, ui) in gc.iter_mut().zip(uc) {
                            *gi += s * ui;
                        }
                    }
                });
                self.accumulate(*gate, |g| {
                    for (row, (ac, uc)) in av.chunks(d).zip(up.chunks(d)).enumerate() {
                        g[row % m] += ac.iter().zip(uc).map(|(x, u)| x * u).sum::<f64>();
                    }
                });
            }
            Op::MseLoss { pred, target } => {
                let p = self.value(*pred).data().to_vec();
                let t = self.value(*target).data().to_vec();
                let scale = 2.0 * up[0] / p.len() as f64;
                self.accumulate(*pred, |g| {
                    for ((gi, pi), ti) in g.iter_mut().zip(&p).zip(&t) {
                        *gi += scale * (pi - ti);
                    }
                });
                self.accumulate(*target, |g| {
                    for ((gi, pi), ti) in g.iter_mut().zip(&p).zip(&t) {
                        *gi -= scale * (pi - ti);
                    }
                });
            }
            Op::Sum(x) => self.accumulate(*x, |g| {
                for gi in g.iter_mut() {
                    *gi += up[0];
                }
            }),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(*a, |g| add_into(g, up, 1.0));
                self.accumulate(*b, |g| add_into(g, up, sign));
            }
            Op::PadLeft { x, amount } => {
                let out_len = *self.nodes[idx].value.shape().last().unwrap();
                self.accumulate(*x, |g| {
                    let len = out_len - amount;
                    for (gr, ur) in g.chunks_mut(len).zip(up.chunks(out_len)) {
                        gr[0] += ur[..*amount].iter().sum::<f64>();
                        add_into(gr, &ur[*amount..], 1.0);
                    }
                });
            }
            Op::Narrow { x, axis, start } => {
                let in_shape = self.value(*x).shape().to_vec();
                let len = self.nodes[idx].value.shape()[*axis];
                let extent = in_shape[*axis];
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                self.accumulate(*x, |g| {
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        add_into(
                            &mut g[base..base + len * inner],
                            &up[o * len * inner..(o + 1) * len * inner],
                            1.0,
                        );
                    }
                });
            }
            Op::Permute { x, perm } => {
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let back = permute_data(up, &out_shape, &inverse);
                self.accumulate(*x, |g| add_into(g, &back, 1.0));
            }
            Op::Reshape(x) => self.accumulate(*x, |g| add_into(g, up, 1.0)),
        }
        self.nodes[idx].op = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(
        &mut self,
        idx: usize,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        dilation: usize,
        up: &[f64],
    ) {
        let xs = self.value(input).shape().to_vec();
        let (n, cin, lin) = match xs[..] {
            [c, l] => (1, c, l),
            [n, c, l] => (n, c, l),
            _ => unreachable!(),
        };
        let [cout, _, k] = self.value(weight).shape()[..] else {
            unreachable!()
        };
        let lout = *self.nodes[idx].value.shape().last().unwrap();

        if self.nodes[bias.0].requires_grad {
            self.accumulate(bias, |g| {
                for s in 0..n {
                    for (c, gc) in g.iter_mut().enumerate() {
                        *gc += up[(s * cout + c) * lout..(s * cout + c + 1) * lout]
                            .iter()
                            .sum::<f64>();
                    }
                }
            });
        }
        if self.nodes[weight.0].requires_grad {
            let xd = self.value(input).data().to_vec();
            self.accumulate(weight, |g| {
                for s in 0..n {
                    for c in 0..cout {
                        let us = &up[(s * cout + c) * lout..(s * cout + c + 1) * lout];
                        for i in 0..cin {
                            let xrow = &xd[(s * cin + i) * lin..(s * cin + i + 1) * lin];
                            for j in 0..k {
                                let off = j * dilation;
                                let acc: f64 = if stride == 1 {
                                    us.iter()
                                        .zip(&xrow[off..off + lout])
                                        .map(|(u, x)| u * x)
                                        .sum()
                                } else {
                                    us.iter()
                                        .enumerate()
                                        .map(|(t, u)| u * xrow[t * stride + off])
                                        .sum()
                                };
                                g[(c * cin + i) * k + j] += acc;
                            }
                        }
                    }
                }
            });
        }
        if self.nodes[input.0].requires_grad {
            let wd = self.value(weight).data().to_vec();
            self.accumulate(input, |g| {
                for s in 0..n {
                    for c in 0..cout {
                        let us = &up[(s * cout + c) * lout..(s * cout + c + 1) * lout];
                        for i in 0..cin {
                            let grow = &mut g[(s * cin + i) * lin..(s * cin + i + 1) * lin];
                            for j in 0..k {
                                let wv = wd[(c * cin + i) * k + j];
                                let off = j * dilation;
                                if stride == 1 {
                                    for (gx, u) in grow[off..off + lout].iter_mut().zip(us) {
                                        *gx += wv * u;
                                    }
                                } else {
                                    for (t, u) in us.iter().enumerate() {
                                        grow[t * stride + off] += wv * u;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
    }

    fn linear_backward(&mut self, input: Var, weight: Var, bias: Var, up: &[f64]) {
        let f = *self.value(input).shape().last().unwrap();
        let g_dim = self.value(weight).shape()[1];
        let m = self.value(input).numel() / f;
        if self.nodes[bias.0].requires_grad {
            self.accumulate(bias, |g| {
                for row in up.chunks(g_dim) {
                    add_into(g, row, 1.0);
                }
            });
        }
        if self.nodes[weight.0].requires_grad {
            let xd = self.value(input).data().to_vec();
            self.accumulate(weight, |g| {
                for r in 0..m {
                    let urow = &up[r * g_dim..(r + 1) * g_dim];
                    for (p, &xv) in xd[r * f..(r + 1) * f].iter().enumerate() {
                        add_into(&mut g[p * g_dim..(p + 1) * g_dim], urow, xv);
                    }
                }
            });
        }
        if self.nodes[input.0].requires_grad {
            let wd = self.value(weight).data().to_vec();
            self.accumulate(input, |g| {
                for r in 0..m {
                    let urow = &up[r * g_dim..(r + 1) * g_dim];
                    for (p, gx) in g[r * f..(r + 1) * f].iter_mut().enumerate() {
                        *gx += wd[p * g_dim..(p + 1) * g_dim]
                            .iter()
                            .zip(urow)
                            .map(|(w, u)| w * u)
                            .sum::<f64>();
                    }
                }
            });
        }
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(Error::Argument(format!(
            "{op}: rank mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if let Some(ax) = (0..a.rank()).find(|&i| a.shape()[i] != b.shape()[i]) {
        return Err(Error::dim(op, ax, a.shape()[ax], b.shape()[ax]));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; shape.len()];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
