//! The recording tape and reverse replay.

use rand::RngCore;

use super::conv::{self, ConvGeom};
use super::norm::{self, BnCache, BnMode, RunningStats};
use super::pool::{self, IndexMask};
use super::sasa::{self, SasaCache, SasaShapes, SasaSpec, SasaWeightsRef};
use super::{ensure_finite, expect_rank, gemm, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool {
        x: Var,
        mask: IndexMask,
    },
    MaxUnpool {
        x: Var,
        mask: IndexMask,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Reshape {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Sasa {
        x: Var,
        w: [Var; 5],
        spec: SasaSpec,
        cache: SasaCache,
    },
    Sum {
        x: Var,
    },
    ScalarFn {
        x: Var,
        local_grad: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

/// Linear record of a forward computation. Nodes are appended in
/// evaluation order, so reverse index order is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, op_name: &'static str, parents: &[Var]) -> Result<Var> {
        ensure_finite(op_name, value.data())?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        let requires_grad = value.requires_grad;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a named parameter copied from `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name}")))?;
        let mut value = t.clone();
        value.grad = None;
        let requires_grad = value.requires_grad;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name: Some(name.to_string()),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank(OP, xt, 4)?;
        expect_rank(OP, wt, 4)?;
        let (xs, ws) = (xt.shape(), wt.shape());
        if stride == 0 {
            return Err(Error::dim(OP, "stride must be at least 1"));
        }
        if ws[1] != xs[1] {
            return Err(Error::dim(
                OP,
                format!("input channels (axis 1) {} vs kernel channels {}", xs[1], ws[1]),
            ));
        }
        if bt.shape() != [ws[0]] {
            return Err(Error::dim(OP, format!("bias shape {:?} vs {} filters", bt.shape(), ws[0])));
        }
        let (hp, wp) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
        if ws[2] > hp || ws[3] > wp {
            return Err(Error::dim(
                OP,
                format!("kernel {}x{} exceeds padded input {hp}x{wp} (axes 2,3)", ws[2], ws[3]),
            ));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            f: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad: padding,
            ho: (hp - ws[2]) / stride + 1,
            wo: (wp - ws[3]) / stride + 1,
        };
        let (out, cols) = conv::forward(&geom, xt.data(), wt.data(), bt.data());
        let value = Tensor::raw(vec![geom.n, geom.f, geom.ho, geom.wo], out);
        self.push(value, Op::Conv2d { x, w, b, geom, cols }, OP, &[x, w, b])
    }

    /// 2x2 max pooling with stride 2. The returned mask feeds [`Tape::max_unpool2d`].
    pub fn maxpool2d_with_indices(&mut self, x: Var) -> Result<(Var, IndexMask)> {
        let xt = self.value(x);
        expect_rank("maxpool2d", xt, 4)?;
        let s = xt.shape();
        let (out, mask) = pool::maxpool_forward([s[0], s[1], s[2], s[3]], xt.data())?;
        let value = Tensor::raw(mask.out_shape.to_vec(), out);
        let var = self.push(value, Op::MaxPool { x, mask: mask.clone() }, "maxpool2d", &[x])?;
        Ok((var, mask))
    }

    pub fn max_unpool2d(&mut self, x: Var, mask: &IndexMask, out_size: (usize, usize)) -> Result<Var> {
        let xt = self.value(x);
        pool::unpool_check(mask, xt.shape(), out_size)?;
        let out = pool::unpool_forward(mask, xt.data());
        let value = Tensor::raw(mask.in_shape.to_vec(), out);
        self.push(value, Op::MaxUnpool { x, mask: mask.clone() }, "max_unpool2d", &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let out = xt.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::raw(xt.shape().to_vec(), out);
        self.push(value, Op::Relu { x }, "relu", &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let out = xt.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::raw(xt.shape().to_vec(), out);
        self.push(value, Op::Sigmoid { x }, "sigmoid", &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xt = self.value(x);
        let out = xt.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::raw(xt.shape().to_vec(), out);
        self.push(value, Op::Scale { x, factor }, "scale", &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(Error::dim("add", format!("{:?} vs {:?}", at.shape(), bt.shape())));
        }
        let out = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::raw(at.shape().to_vec(), out);
        self.push(value, Op::Add { a, b }, "add", &[a, b])
    }

    /// `x [N, D] * w [D, E] + b [E]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank(OP, xt, 2)?;
        expect_rank(OP, wt, 2)?;
        let (n, d) = (xt.shape()[0], xt.shape()[1]);
        let e = wt.shape()[1];
        if wt.shape()[0] != d || bt.shape() != [e] {
            return Err(Error::dim(
                OP,
                format!("input {:?}, weight {:?}, bias {:?}", xt.shape(), wt.shape(), bt.shape()),
            ));
        }
        let mut out = vec![0.0; n * e];
        for row in out.chunks_mut(e) {
            row.copy_from_slice(bt.data());
        }
        gemm(n, d, e, 1.0, xt.data(), false, wt.data(), false, 1.0, &mut out);
        let value = Tensor::raw(vec![n, e], out);
        self.push(value, Op::Dense { x, w, b }, OP, &[x, w, b])
    }

    /// Returns the normalized output and, in training mode, the updated running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats,
        mode: BnMode,
        momentum: f64,
        eps: f64,
    ) -> Result<(Var, Option<RunningStats>)> {
        let xt = self.value(x);
        expect_rank("batchnorm2d", xt, 4)?;
        let s = xt.shape();
        let shape = [s[0], s[1], s[2], s[3]];
        let fwd = norm::bn_forward(
            shape,
            xt.data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
            momentum,
            eps,
        )?;
        let value = Tensor::raw(shape.to_vec(), fwd.out);
        let var = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache: fwd.cache,
            },
            "batchnorm2d",
            &[x, gamma, beta],
        )?;
        Ok((var, fwd.updated))
    }

    /// Inverted dropout. With `rng == None` (evaluation) this is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        norm::check_rate(rate)?;
        let Some(rng) = rng else { return Ok(x) };
        let xt = self.value(x);
        let mask = norm::dropout_mask(xt.numel(), rate, rng);
        let out = xt.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::raw(xt.shape().to_vec(), out);
        self.push(value, Op::Dropout { x, mask }, "dropout", &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push(value, Op::Reshape { x }, "reshape", &[x])
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if axis >= s.len() {
            return Err(Error::dim("softmax", format!("axis {axis} out of range for {s:?}")));
        }
        let out = softmax_along(s, axis, xt.data());
        let value = Tensor::raw(s.to_vec(), out);
        self.push(value, Op::Softmax { x, axis }, "softmax", &[x])
    }

    /// Local self-attention layer; `w` is `[W_q, W_k, W_v, row_offsets, col_offsets]`.
    pub fn sasa(&mut self, x: Var, w: [Var; 5], spec: SasaSpec) -> Result<Var> {
        const OP: &str = "sasa";
        let xt = self.value(x);
        expect_rank(OP, xt, 4)?;
        let s = xt.shape();
        let shapes = SasaShapes {
            n: s[0],
            c: s[1],
            h: s[2],
            w: s[3],
        };
        spec.validate(shapes.c)?;
        let d = spec.head_dim(shapes.c);
        let expected = [
            vec![spec.heads, d, d],
            vec![spec.heads, d, d],
            vec![spec.heads, d, d],
            vec![spec.heads, spec.k, spec.row_dim(shapes.c)],
            vec![spec.heads, spec.k, spec.col_dim(shapes.c)],
        ];
        for (v, want) in w.iter().zip(&expected) {
            let got = self.value(*v).shape();
            // zero-width offset tables (d == 1) are represented by a 1-wide dummy
            if got != want.as_slice() && !(want[2] == 0 && got == [want[0], want[1], 1]) {
                return Err(Error::dim(OP, format!("weight shape {got:?}, expected {want:?}")));
            }
        }
        let wts = SasaWeightsRef {
            wq: self.value(w[0]).data(),
            wk: self.value(w[1]).data(),
            wv: self.value(w[2]).data(),
            row: self.value(w[3]).data(),
            col: self.value(w[4]).data(),
        };
        let (out, cache) = sasa::forward(&spec, &shapes, xt.data(), &wts);
        let value = Tensor::raw(s.to_vec(), out);
        self.push(value, Op::Sasa { x, w, spec, cache }, OP, &[x, w[0], w[1], w[2], w[3], w[4]])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x }, "sum", &[x])
    }

    /// Scalar function of `x` computed outside the tape, given its value and
    /// its gradient with respect to every element of `x`.
    pub fn scalar_fn(&mut self, x: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.value(x).numel() {
            return Err(Error::dim(
                "scalar_fn",
                format!("gradient length {} vs input size {}", local_grad.len(), self.value(x).numel()),
            ));
        }
        ensure_finite("scalar_fn", &local_grad)?;
        self.push(Tensor::scalar(value), Op::ScalarFn { x, local_grad }, "scalar_fn", &[x])
    }

    /// Mean cross-entropy of the rows of `logits [R, K]` against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        const OP: &str = "cross_entropy";
        let lt = self.value(logits);
        expect_rank(OP, lt, 2)?;
        let (r, k) = (lt.shape()[0], lt.shape()[1]);
        if targets.len() != r {
            return Err(Error::dim(OP, format!("{} targets for {r} rows", targets.len())));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::dim(OP, format!("target {t} out of {k} classes")));
        }
        let x = lt.data();
        let probs = softmax_along(&[r, k], 1, x);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(row, &t)| {
                let logits_row = &x[row * k..(row + 1) * k];
                let max = logits_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits_row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - logits_row[t]
            })
            .sum::<f64>()
            / r as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            OP,
            &[logits],
        )
    }

    /// Reverse replay from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Some(_), Some(g)) = (&node.name, g) {
                ensure_finite("backward", g)?;
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradients of named parameters.
    pub fn named_grads<'a>(&'a self, grads: &'a Gradients) -> impl Iterator<Item = (&'a str, &'a [f64])> {
        self.nodes.iter().enumerate().filter_map(move |(i, node)| {
            let name = node.name.as_deref()?;
            let g = grads.get(Var(i))?;
            Some((name, g))
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, contribution: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let cg = conv::backward(geom, self.value(*w).data(), cols, g, self.needs(*x));
                if let Some(gx) = cg.x {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, cg.w);
                self.accumulate(grads, *b, cg.b);
            }
            Op::MaxPool { x, mask } => {
                self.accumulate(grads, *x, pool::maxpool_backward(mask, g));
            }
            Op::MaxUnpool { x, mask } => {
                self.accumulate(grads, *x, pool::unpool_backward(mask, g));
            }
            Op::Relu { x } => {
                let gx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid { x } => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| gi * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, g.iter().map(|gi| gi * factor).collect());
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Dense { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, d) = (xt.shape()[0], xt.shape()[1]);
                let e = wt.shape()[1];
                if self.needs(*x) {
                    let mut gx = vec![0.0; n * d];
                    gemm(n, e, d, 1.0, g, false, wt.data(), true, 0.0, &mut gx);
                    self.accumulate(grads, *x, gx);
                }
                let mut gw = vec![0.0; d * e];
                gemm(d, n, e, 1.0, xt.data(), true, g, false, 0.0, &mut gw);
                self.accumulate(grads, *w, gw);
                let mut gb = vec![0.0; e];
                for row in g.chunks(e) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *b, gb);
            }
            Op::BatchNorm { x, gamma, beta, cache } => {
                let s = self.value(*x).shape();
                let (gx, gg, gb) = norm::bn_backward([s[0], s[1], s[2], s[3]], self.value(*gamma).data(), cache, g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, g.iter().zip(mask).map(|(gi, m)| gi * m).collect());
            }
            Op::Reshape { x } => self.accumulate(grads, *x, g.to_vec()),
            Op::Softmax { x, axis } => {
                let s = node.value.shape();
                let (outer, len, inner) = axis_split(s, *axis);
                let y = node.value.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |t: usize| (o * len + t) * inner + i;
                        let dot: f64 = (0..len).map(|t| g[at(t)] * y[at(t)]).sum();
                        for t in 0..len {
                            gx[at(t)] = y[at(t)] * (g[at(t)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sasa { x, w, spec, cache } => {
                let s = self.value(*x).shape();
                let shapes = SasaShapes {
                    n: s[0],
                    c: s[1],
                    h: s[2],
                    w: s[3],
                };
                let wts = SasaWeightsRef {
                    wq: self.value(w[0]).data(),
                    wk: self.value(w[1]).data(),
                    wv: self.value(w[2]).data(),
                    row: self.value(w[3]).data(),
                    col: self.value(w[4]).data(),
                };
                let sg = sasa::backward(spec, &shapes, self.value(*x).data(), &wts, cache, g);
                self.accumulate(grads, *x, sg.x);
                self.accumulate(grads, w[0], sg.wq);
                self.accumulate(grads, w[1], sg.wk);
                self.accumulate(grads, w[2], sg.wv);
                self.accumulate(grads, w[3], sg.row);
                self.accumulate(grads, w[4], sg.col);
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::ScalarFn { x, local_grad } => {
                self.accumulate(grads, *x, local_grad.iter().map(|v| v * g[0]).collect());
            }
            Op::CrossEntropy { logits, probs, targets } => {
                let r = targets.len();
                let k = probs.len() / r;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * g[0] / r as f64).collect();
                for (row, &t) in targets.iter().enumerate() {
                    gx[row * k + t] -= g[0] / r as f64;
                }
                self.accumulate(grads, *logits, gx);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_along(shape: &[usize], axis: usize, x: &[f64]) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| (o * len + t) * inner + i;
            let max = (0..len).map(|t| x[at(t)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for t in 0..len {
                let e = (x[at(t)] - max).exp();
                out[at(t)] = e;
                z += e;
            }
            for t in 0..len {
                out[at(t)] /= z;
            }
        }
    }
    out
}
