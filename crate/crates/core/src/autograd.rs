//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly and
//! records how to push gradients back to its inputs. One graph is built per
//! sample; [`Graph::backward`] walks the tape in reverse once.

use std::rc::Rc;

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::resample::SpatialMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Numerical guards of the mixture head.
pub const LOG_SIGMA_CLAMP: f64 = 10.0;
pub const RHO_LIMIT: f64 = 1.0 - 1e-6;
pub const PROB_FLOOR: f64 = 1e-12;

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddChannel {
        map: Var,
        vec: Var,
    },
    Linear {
        w: Var,
        x: Var,
        b: Option<Var>,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Resample {
        x: Var,
        map: Rc<SpatialMap>,
    },
    Softmax(Var),
    WeightedSum {
        alpha: Var,
        map: Var,
    },
    ChannelMean(Var),
    Sum(Var),
    Mean(Var),
    DivMax {
        x: Var,
        argmax: usize,
    },
    Dot {
        x: Var,
        weights: Rc<Vec<f64>>,
    },
    GmmNll {
        y: Var,
        m: usize,
        target: (f64, f64),
    },
    SoftmaxXent {
        logits: Var,
        target: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        target: Rc<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    leaves: Vec<(ParamId, Var)>,
}

/// Gradients of one scalar with respect to every node of the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free leaf variable whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a stored parameter into this graph (once per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.bound.len() < store.len() {
            self.bound.resize(store.len(), None);
        }
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, store.is_trainable(id));
        self.bound[id.index()] = Some(v);
        self.leaves.push((id, v));
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/cols are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0; c * ho * wo];
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                            if xs[i] > best_v {
                                best_v = xs[i];
                                best = i;
                            }
                        }
                    }
                    let o = ch * ho * wo + oy * wo + ox;
                    out[o] = best_v;
                    argmax[o] = best;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_vec(&[c, ho, wo], out),
            Op::MaxPool2 { x, argmax },
            rg,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let value = Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect());
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| k * v, Op::Scale(x, k))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "elementwise shape mismatch");
        let value = Tensor::from_vec(
            ta.shape(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        );
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `(C, H, W)` map plus a length-`C` vector broadcast over positions.
    pub fn add_channel(&mut self, map: Var, vec: Var) -> Var {
        let (c, h, w) = self.value(map).dims3();
        let v = self.value(vec).data();
        assert_eq!(v.len(), c);
        let mut out = self.value(map).data().to_vec();
        for ch in 0..c {
            for o in &mut out[ch * h * w..(ch + 1) * h * w] {
                *o += v[ch];
            }
        }
        let rg = self.rg(&[map, vec]);
        self.push(
            Tensor::from_vec(&[c, h, w], out),
            Op::AddChannel { map, vec },
            rg,
        )
    }

    /// `w x + b` for `w` of shape `(O, I)`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let tw = self.value(w);
        let (o, i) = (tw.shape()[0], tw.shape()[1]);
        let xs = self.value(x).data();
        assert_eq!(xs.len(), i, "linear input width");
        let ws = tw.data();
        let mut out: Vec<f64> = (0..o)
            .map(|r| ws[r * i..(r + 1) * i].iter().zip(xs).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = b {
            for (y, bb) in out.iter_mut().zip(self.value(b).data()) {
                *y += bb;
            }
        }
        let mut deps = vec![w, x];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(Tensor::vector(out), Op::Linear { w, x, b }, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.value(*p).data().iter().copied())
            .collect();
        let rg = self.rg(parts);
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let data = self.value(x).data()[start..start + len].to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::vector(data), Op::Slice { x, start }, rg)
    }

    /// Channel-wise spatial resampling of a `(C, h, w)` map.
    pub fn resample(&mut self, x: Var, map: Rc<SpatialMap>) -> Var {
        let (c, h, w) = self.value(x).dims3();
        assert_eq!((h, w), (map.in_h, map.in_w), "resample input grid");
        let out = map.apply(self.value(x).data(), c);
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_vec(&[c, map.out_h, map.out_w], out),
            Op::Resample { x, map },
            rg,
        )
    }

    /// Softmax over all elements, keeping the input's shape.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::from_vec(t.shape(), softmax(t.data()));
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax(x), rg)
    }

    /// `sum_{i,j} alpha[i,j] * map[:, i, j]` -> length-`C` vector.
    pub fn weighted_sum(&mut self, alpha: Var, map: Var) -> Var {
        let (c, h, w) = self.value(map).dims3();
        let a = self.value(alpha).data();
        assert_eq!(a.len(), h * w);
        let m = self.value(map).data();
        let out = (0..c)
            .map(|ch| {
                m[ch * h * w..(ch + 1) * h * w]
                    .iter()
                    .zip(a)
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let rg = self.rg(&[alpha, map]);
        self.push(Tensor::vector(out), Op::WeightedSum { alpha, map }, rg)
    }

    /// Global average pooling `(C, H, W)` -> `C`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let d = self.value(x).data();
        let n = (h * w) as f64;
        let out = (0..c)
            .map(|ch| d[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n)
            .collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::vector(out), Op::ChannelMean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Divide by the maximum element. A non-positive maximum yields zeros.
    pub fn div_max(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (argmax, mx) = t
            .data()
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let value = if mx > 0.0 {
            Tensor::from_vec(t.shape(), t.data().iter().map(|v| v / mx).collect())
        } else {
            Tensor::zeros(t.shape())
        };
        let rg = self.rg(&[x]) && mx > 0.0;
        self.push(value, Op::DivMax { x, argmax }, rg)
    }

    /// Inner product with fixed weights -> scalar.
    pub fn dot_const(&mut self, x: Var, weights: Rc<Vec<f64>>) -> Var {
        let t = self.value(x);
        assert_eq!(t.len(), weights.len());
        let s = t.data().iter().zip(weights.iter()).map(|(a, b)| a * b).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Dot { x, weights }, rg)
    }

    /// Negative log-likelihood of `target` under the mixture encoded by the
    /// first `6m` entries of `y` (layout: weights logits, mu_x, mu_y,
    /// log sigma_x, log sigma_y, raw rho; `m` each).
    pub fn gmm_nll(&mut self, y: Var, m: usize, target: (f64, f64)) -> Var {
        let raw = &self.value(y).data()[..6 * m];
        let nll = gmm_nll_and_grad(raw, m, target, false).0;
        let rg = self.rg(&[y]);
        self.push(Tensor::scalar(nll), Op::GmmNll { y, m, target }, rg)
    }

    /// Categorical cross-entropy `-sum_c p_c log softmax(logits)_c`.
    pub fn softmax_xent(&mut self, logits: Var, target: &[f64]) -> Var {
        let l = self.value(logits).data();
        assert_eq!(l.len(), target.len());
        let ls = log_softmax(l);
        let v: f64 = -target.iter().zip(&ls).map(|(p, q)| p * q).sum::<f64>();
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(v),
            Op::SoftmaxXent {
                logits,
                target: target.to_vec(),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `target`.
    pub fn bce_with_logits(&mut self, logits: Var, target: Rc<Vec<f64>>) -> Var {
        let l = self.value(logits).data();
        assert_eq!(l.len(), target.len());
        let n = l.len() as f64;
        // max(z,0) - z t + ln(1 + e^{-|z|})
        let v: f64 = l
            .iter()
            .zip(target.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let rg = self.rg(&[logits]);
        self.push(Tensor::scalar(v), Op::BceWithLogits { logits, target }, rg)
    }

    /// Reverse sweep from scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Add `weight * dL/dparam` of every bound parameter into `acc`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, acc: &mut ParamGrads, weight: f64) {
        for &(id, v) in &self.leaves {
            if let Some(g) = grads.get(v) {
                acc.add_scaled(id, g, weight);
            }
        }
    }

    /// Variable bound to parameter `id` in this graph, if any.
    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.bound.get(id.index()).copied().flatten()
    }

    fn grad_slot<'a>(
        &self,
        grads: &'a mut [Option<Tensor>],
        v: Var,
    ) -> Option<&'a mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        slot.as_mut()
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if let Some(t) = self.grad_slot(grads, v) {
            f(t.data_mut());
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let (gx, gw) = conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    need_x,
                    need_w,
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, |d| add_into(d, gx.data()));
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, |d| add_into(d, gw.data()));
                }
                if let Some(b) = b {
                    let (o, h, wd) = g.dims3();
                    self.accumulate(grads, *b, |d| {
                        for ch in 0..o {
                            d[ch] += gd[ch * h * wd..(ch + 1) * h * wd].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::MaxPool2 { x, argmax } => self.accumulate(grads, *x, |d| {
                for (o, &i) in argmax.iter().enumerate() {
                    d[i] += gd[o];
                }
            }),
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        if xs[i] > 0.0 {
                            d[i] += gd[i];
                        }
                    }
                })
            }
            Op::Tanh(x) => {
                let ys = out.data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * (1.0 - ys[i] * ys[i]);
                    }
                })
            }
            Op::Sigmoid(x) => {
                let ys = out.data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * ys[i] * (1.0 - ys[i]);
                    }
                })
            }
            Op::Exp(x) => {
                let ys = out.data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * ys[i];
                    }
                })
            }
            Op::Abs(x) => {
                let xs = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * sign(xs[i]);
                    }
                })
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] -= gd[i];
                    }
                });
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * xb[i];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * xa[i];
                    }
                });
            }
            Op::Scale(x, k) => self.accumulate(grads, *x, |d| {
                for i in 0..d.len() {
                    d[i] += k * gd[i];
                }
            }),
            Op::AddChannel { map, vec } => {
                let (c, h, w) = g.dims3();
                self.accumulate(grads, *map, |d| add_into(d, gd));
                self.accumulate(grads, *vec, |d| {
                    for ch in 0..c {
                        d[ch] += gd[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>();
                    }
                });
            }
            Op::Linear { w, x, b } => {
                let tw = self.value(*w);
                let (o, i) = (tw.shape()[0], tw.shape()[1]);
                let xs = self.value(*x).data();
                let ws = tw.data();
                self.accumulate(grads, *w, |d| {
                    for r in 0..o {
                        let gr = gd[r];
                        if gr != 0.0 {
                            for (dd, xv) in d[r * i..(r + 1) * i].iter_mut().zip(xs) {
                                *dd += gr * xv;
                            }
                        }
                    }
                });
                self.accumulate(grads, *x, |d| {
                    for r in 0..o {
                        let gr = gd[r];
                        if gr != 0.0 {
                            for (dd, wv) in d.iter_mut().zip(&ws[r * i..(r + 1) * i]) {
                                *dd += gr * wv;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    self.accumulate(grads, *b, |d| add_into(d, gd));
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.accumulate(grads, *p, |d| add_into(d, &gd[off..off + n]));
                    off += n;
                }
            }
            Op::Slice { x, start } => self.accumulate(grads, *x, |d| {
                add_into(&mut d[*start..*start + gd.len()], gd)
            }),
            Op::Resample { x, map } => {
                let c = g.dims3().0;
                self.accumulate(grads, *x, |d| map.apply_transpose_into(gd, c, d));
            }
            Op::Softmax(x) => {
                let ys = out.data();
                let dot: f64 = ys.iter().zip(gd).map(|(y, g)| y * g).sum();
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += ys[i] * (gd[i] - dot);
                    }
                })
            }
            Op::WeightedSum { alpha, map } => {
                let (c, h, w) = self.value(*map).dims3();
                let n = h * w;
                let a = self.value(*alpha).data();
                let m = self.value(*map).data();
                self.accumulate(grads, *alpha, |d| {
                    for ch in 0..c {
                        for p in 0..n {
                            d[p] += gd[ch] * m[ch * n + p];
                        }
                    }
                });
                self.accumulate(grads, *map, |d| {
                    for ch in 0..c {
                        for p in 0..n {
                            d[ch * n + p] += gd[ch] * a[p];
                        }
                    }
                });
            }
            Op::ChannelMean(x) => {
                let (c, h, w) = self.value(*x).dims3();
                let n = (h * w) as f64;
                self.accumulate(grads, *x, |d| {
                    for ch in 0..c {
                        for v in &mut d[ch * h * w..(ch + 1) * h * w] {
                            *v += gd[ch] / n;
                        }
                    }
                })
            }
            Op::Sum(x) => self.accumulate(grads, *x, |d| {
                for v in d.iter_mut() {
                    *v += gd[0];
                }
            }),
            Op::Mean(x) => self.accumulate(grads, *x, |d| {
                let k = gd[0] / d.len() as f64;
                for v in d.iter_mut() {
                    *v += k;
                }
            }),
            Op::DivMax { x, argmax } => {
                let xs = self.value(*x).data();
                let mx = xs[*argmax];
                let ys = out.data();
                // y_i = x_i / x_k  =>  dy_i/dx_i = 1/x_k,  dy_i/dx_k -= x_i / x_k^2
                let cross: f64 = ys.iter().zip(gd).map(|(y, g)| y * g).sum::<f64>() / mx;
                self.accumulate(grads, *x, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] / mx;
                    }
                    d[*argmax] -= cross;
                })
            }
            Op::Dot { x, weights } => self.accumulate(grads, *x, |d| {
                for (v, w) in d.iter_mut().zip(weights.iter()) {
                    *v += gd[0] * w;
                }
            }),
            Op::GmmNll { y, m, target } => {
                let raw = &self.value(*y).data()[..6 * m];
                let (_, gy) = gmm_nll_and_grad(raw, *m, *target, true);
                self.accumulate(grads, *y, |d| {
                    for (v, gv) in d.iter_mut().zip(&gy) {
                        *v += gd[0] * gv;
                    }
                })
            }
            Op::SoftmaxXent { logits, target } => {
                let p = softmax(self.value(*logits).data());
                let mass: f64 = target.iter().sum();
                self.accumulate(grads, *logits, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[0] * (mass * p[i] - target[i]);
                    }
                })
            }
            Op::BceWithLogits { logits, target } => {
                let l = self.value(*logits).data();
                let n = l.len() as f64;
                self.accumulate(grads, *logits, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[0] * (sigmoid(l[i]) - target[i]) / n;
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Mixture NLL of one offset plus (optionally) its gradient with respect to
/// the raw head outputs. Guards: log-sigma clamped to `±LOG_SIGMA_CLAMP`,
/// correlation clamped to `±RHO_LIMIT` (zero gradient when clamped).
pub(crate) fn gmm_nll_and_grad(
    raw: &[f64],
    m: usize,
    (dx, dy): (f64, f64),
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let logits = &raw[..m];
    let log_pi = log_softmax(logits);
    let mut log_terms = vec![0.0; m];
    struct Comp {
        nx: f64,
        ny: f64,
        rho: f64,
        one_m: f64,
        z: f64,
        sx: f64,
        sy: f64,
        s_clamped: (bool, bool),
        rho_clamped: bool,
    }
    let mut comps = Vec::with_capacity(m);
    for j in 0..m {
        let mux = raw[m + j];
        let muy = raw[2 * m + j];
        let lsx_raw = raw[3 * m + j];
        let lsy_raw = raw[4 * m + j];
        let lsx = lsx_raw.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP);
        let lsy = lsy_raw.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP);
        let rho_t = raw[5 * m + j].tanh();
        let rho = rho_t.clamp(-RHO_LIMIT, RHO_LIMIT);
        let (sx, sy) = (lsx.exp(), lsy.exp());
        let nx = (dx - mux) / sx;
        let ny = (dy - muy) / sy;
        let one_m = 1.0 - rho * rho;
        let z = nx * nx + ny * ny - 2.0 * rho * nx * ny;
        let log_n = -(2.0 * std::f64::consts::PI).ln() - lsx - lsy - 0.5 * one_m.ln()
            - z / (2.0 * one_m);
        log_terms[j] = log_pi[j] + log_n;
        comps.push(Comp {
            nx,
            ny,
            rho,
            one_m,
            z,
            sx,
            sy,
            s_clamped: (lsx != lsx_raw, lsy != lsy_raw),
            rho_clamped: rho != rho_t,
        });
    }
    let mx = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_e: f64 = log_terms.iter().map(|v| (v - mx).exp()).sum();
    let lse = mx + sum_e.ln();
    let nll = -lse.max(PROB_FLOOR.ln());
    if !want_grad || lse < PROB_FLOOR.ln() {
        return (nll, vec![0.0; 6 * m]);
    }
    let mut g = vec![0.0; 6 * m];
    for j in 0..m {
        let gamma = (log_terms[j] - lse).exp();
        let c = &comps[j];
        let pi = log_pi[j].exp();
        g[j] = pi - gamma;
        let inv = 1.0 / c.one_m;
        // d log N / d mu
        g[m + j] = -gamma * inv * (c.nx - c.rho * c.ny) / c.sx;
        g[2 * m + j] = -gamma * inv * (c.ny - c.rho * c.nx) / c.sy;
        // d log N / d log sigma
        if !c.s_clamped.0 {
            g[3 * m + j] = -gamma * (-1.0 + inv * (c.nx * c.nx - c.rho * c.nx * c.ny));
        }
        if !c.s_clamped.1 {
            g[4 * m + j] = -gamma * (-1.0 + inv * (c.ny * c.ny - c.rho * c.nx * c.ny));
        }
        if !c.rho_clamped {
            let dlog_drho = c.rho * inv + c.nx * c.ny * inv - c.z * c.rho * inv * inv;
            g[5 * m + j] = -gamma * dlog_drho * (1.0 - c.rho * c.rho);
        }
    }
    (nll, g)
}

/// Same-padded (or strided) 2-D convolution of a `(C, H, W)` input with
/// `(O, C, K, K)` weights.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (c, h, wd) = x.dims3();
    let ws = w.shape();
    let (o, k) = (ws[0], ws[2]);
    assert_eq!(ws[1], c, "conv input channels");
    let (cols, ho, wo) = im2col(x.data(), c, h, wd, k, stride, pad);
    let j = c * k * k;
    let wv = w.data();
    let mut out = vec![0.0; o * ho * wo];
    for (p, col) in cols.chunks_exact(j).enumerate() {
        for oc in 0..o {
            let row = &wv[oc * j..(oc + 1) * j];
            let bias = b.map_or(0.0, |b| b.data()[oc]);
            out[oc * ho * wo + p] = bias + row.iter().zip(col).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Tensor::from_vec(&[o, ho, wo], out)
}

/// Patch matrix: one row of `c * k * k` values per output position, zero
/// where the window leaves the input.
fn im2col(xs: &[f64], c: usize, h: usize, wd: usize, k: usize, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let j = c * k * k;
    let mut cols = vec![0.0; ho * wo * j];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * j..(oy * wo + ox + 1) * j];
            for ic in 0..c {
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < wd as isize {
                            row[(ic * k + ky) * k + kx] = xs[(ic * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (c, h, wd) = x.dims3();
    let ws = w.shape();
    let (o, k) = (ws[0], ws[2]);
    let (_, ho, wo) = gout.dims3();
    let j = c * k * k;
    let wv = w.data();
    let gs = gout.data();
    let gw = need_w.then(|| {
        let (cols, _, _) = im2col(x.data(), c, h, wd, k, stride, pad);
        let mut gw = vec![0.0; wv.len()];
        for (p, col) in cols.chunks_exact(j).enumerate() {
            for oc in 0..o {
                let gv = gs[oc * ho * wo + p];
                if gv != 0.0 {
                    for (d, v) in gw[oc * j..(oc + 1) * j].iter_mut().zip(col) {
                        *d += gv * v;
                    }
                }
            }
        }
        Tensor::from_vec(ws, gw)
    });
    let gx = need_x.then(|| {
        let mut gcol = vec![0.0; j];
        let mut gx = vec![0.0; c * h * wd];
        for oy in 0..ho {
            for ox in 0..wo {
                let p = oy * wo + ox;
                gcol.fill(0.0);
                for oc in 0..o {
                    let gv = gs[oc * ho * wo + p];
                    if gv != 0.0 {
                        for (d, v) in gcol.iter_mut().zip(&wv[oc * j..(oc + 1) * j]) {
                            *d += gv * v;
                        }
                    }
                }
                for ic in 0..c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                gx[(ic * h + iy as usize) * wd + ix as usize] += gcol[(ic * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[c, h, wd], gx)
    });
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference gradient check of `f` at `x0` against the tape.
    fn check(x0: Tensor, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.variable(x0.clone());
        let y = build(&mut g, x);
        let grads = g.backward(y);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(x0.shape()));
        let eps = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut t = x0.clone();
                t.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.variable(t);
                let y = build(&mut g, x);
                g.value(y).item()
            };
            let num = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[i];
            let tol = 1e-6 * (1.0 + num.abs().max(a.abs()));
            assert!((num - a).abs() < tol, "component {i}: numeric {num} vs analytic {a}");
        }
    }

    fn ramp(shape: &[usize], phase: f64) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + phase) * 0.731).sin()).collect())
    }

    #[test]
    fn conv_grads_same_pad() {
        let w = ramp(&[3, 2, 3, 3], 0.3);
        check(ramp(&[2, 5, 4], 0.0), |g, x| {
            let w = g.constant(w.clone());
            let y = g.conv2d(x, w, None, 1, 1);
            let y = g.tanh(y);
            g.sum(y)
        });
        let x = ramp(&[2, 5, 4], 1.1);
        check(ramp(&[3, 2, 3, 3], 0.3), |g, w| {
            let x = g.constant(x.clone());
            let b = g.constant(Tensor::vector(vec![0.1, -0.2, 0.3]));
            let y = g.conv2d(x, w, Some(b), 1, 1);
            let y = g.tanh(y);
            g.sum(y)
        });
    }

    #[test]
    fn conv_grads_strided() {
        let w = ramp(&[2, 2, 3, 3], 0.9);
        check(ramp(&[2, 7, 6], 0.0), |g, x| {
            let w = g.constant(w.clone());
            let y = g.conv2d(x, w, None, 2, 1);
            let y = g.tanh(y);
            g.sum(y)
        });
        let x = ramp(&[2, 7, 6], 0.4);
        check(ramp(&[2, 2, 3, 3], 0.9), |g, w| {
            let x = g.constant(x.clone());
            let y = g.conv2d(x, w, None, 2, 1);
            let y = g.tanh(y);
            g.sum(y)
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = ramp(&[2, 4, 5], 0.2);
        let w = ramp(&[3, 2, 3, 3], 0.7);
        for stride in [1, 2] {
            let y = conv2d_forward(&x, &w, None, stride, 1);
            let (o, ho, wo) = y.dims3();
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ic in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    let ix = (ox * stride + kx) as isize - 1;
                                    if iy >= 0 && iy < 4 && ix >= 0 && ix < 5 {
                                        s += w.data()[((oc * 2 + ic) * 3 + ky) * 3 + kx]
                                            * x.data()[ic * 20 + iy as usize * 5 + ix as usize];
                                    }
                                }
                            }
                        }
                        assert!((y.data()[(oc * ho + oy) * wo + ox] - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn elementwise_and_reduction_grads() {
        check(ramp(&[1, 2, 2], 0.5), |g, x| {
            let a = g.softmax(x);
            let m = g.constant(ramp(&[3, 2, 2], 2.0));
            let s = g.weighted_sum(a, m);
            let s = g.sigmoid(s);
            let e = g.exp(s);
            g.mean(e)
        });
        check(ramp(&[2, 3, 3], 0.1), |g, x| {
            let p = g.max_pool2(x);
            let r = g.relu(x);
            let cm = g.channel_mean(r);
            let y = g.div_max(cm);
            let s1 = g.sum(p);
            let s2 = g.sum(y);
            let s = g.concat(&[s1, s2]);
            let w = g.constant(Tensor::vector(vec![0.3, 0.9]));
            let v = g.mul(s, w);
            g.sum(v)
        });
    }

    #[test]
    fn linear_slice_concat_grads() {
        let w = ramp(&[4, 5], 0.2);
        check(ramp(&[5], 0.0), |g, x| {
            let w = g.constant(w.clone());
            let y = g.linear(w, x, None);
            let a = g.slice(y, 1, 2);
            let b = g.tanh(y);
            let c = g.concat(&[a, b]);
            let d = g.abs(c);
            g.sum(d)
        });
    }

    #[test]
    fn gmm_and_xent_grads() {
        let m = 3;
        check(ramp(&[6 * m + 3], 0.4), |g, y| {
            let a = g.gmm_nll(y, m, (0.3, -0.2));
            let l = g.slice(y, 6 * m, 3);
            let b = g.softmax_xent(l, &[0.0, 1.0, 0.0]);
            let s = g.concat(&[a, b]);
            g.sum(s)
        });
        check(ramp(&[6], 1.3), |g, y| {
            g.bce_with_logits(y, Rc::new(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]))
        });
    }

    #[test]
    fn resample_and_broadcast_grads() {
        let map = Rc::new(SpatialMap::bilinear(4, 4, 2, 2));
        let v = ramp(&[2], 3.0);
        check(ramp(&[2, 4, 4], 0.0), |g, x| {
            let y = g.resample(x, map.clone());
            let v = g.constant(v.clone());
            let y = g.add_channel(y, v);
            let y = g.tanh(y);
            g.dot_const(y, Rc::new((0..8).map(|i| i as f64 - 3.5).collect()))
        });
    }
}
