//! Reverse-mode tape over (batch, channel, height, width) tensors. Each
//! training step records a fresh graph; `backward` walks it once in reverse
//! insertion order.

pub mod kernels;

use ndarray::{s, Array4, Axis, Zip};

pub use kernels::PadMode;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Spectral-norm data captured at op construction: the normalized weight
/// actually convolved with, the sigma estimate and the (u, v) pair it came
/// from.
#[derive(Debug, Clone)]
pub struct SnApplied<S> {
    pub w_normalized: Tensor<S>,
    pub sigma: S,
    pub u: Vec<S>,
    pub v: Vec<S>,
}

enum Op<S: Scalar> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        mode: PadMode,
        sn: Option<SnApplied<S>>,
    },
    LeakyRelu {
        x: NodeId,
        slope: S,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Softplus {
        x: NodeId,
    },
    Abs {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// x * alpha where alpha is (B, 1, H, W), broadcast over channels.
    MulAlpha {
        x: NodeId,
        alpha: NodeId,
    },
    Scale {
        x: NodeId,
        c: S,
    },
    /// a + c * b
    AddScaled {
        a: NodeId,
        b: NodeId,
        c: S,
    },
    /// x - s where s is a (1,1,1,1) node broadcast over x.
    SubScalarNode {
        x: NodeId,
        s: NodeId,
    },
    MeanAll {
        x: NodeId,
    },
    ConcatC {
        parts: Vec<NodeId>,
    },
    ConcatB {
        parts: Vec<NodeId>,
    },
    /// Batch slice [start, start+len).
    SliceB {
        x: NodeId,
        start: usize,
        len: usize,
    },
    UpNearest2 {
        x: NodeId,
    },
    UpBilinear2 {
        x: NodeId,
    },
    AvgPool2 {
        x: NodeId,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    needs_grad: bool,
    op: Op<S>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> S {
        let v = &self.nodes[id.0].value;
        assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v[[0, 0, 0, 0]]
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        mode: PadMode,
        sn: Option<SnApplied<S>>,
    ) -> NodeId {
        let w_used = sn.as_ref().map(|s| &s.w_normalized).unwrap_or(self.value(w));
        let value = kernels::conv2d_forward(
            self.value(x),
            w_used,
            b.map(|bb| self.value(bb)),
            stride,
            pad,
            mode,
        );
        let needs =
            self.needs(x) || self.needs(w) || b.map(|bb| self.needs(bb)).unwrap_or(false);
        self.push(value, Op::Conv2d { x, w, b, stride, pad, mode, sn }, needs)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let sl = S::from_f64(slope);
        let value = self.value(x).mapv(|v| if v > S::zero() { v } else { v * sl });
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope: sl }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| if v > S::zero() { v } else { S::zero() });
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(kernels::sigmoid);
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid { x }, needs)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(kernels::softplus);
        let needs = self.needs(x);
        self.push(value, Op::Softplus { x }, needs)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| v.abs());
        let needs = self.needs(x);
        self.push(value, Op::Abs { x }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add { a, b }, needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) - self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub { a, b }, needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul { a, b }, needs)
    }

    pub fn mul_alpha(&mut self, x: NodeId, alpha: NodeId) -> NodeId {
        let xv = self.value(x);
        let av = self.value(alpha);
        assert_eq!(av.dim().1, 1, "alpha must be single-channel");
        let mut value = xv.clone();
        for c in 0..value.dim().1 {
            let mut lane = value.slice_mut(s![.., c, .., ..]);
            lane *= &av.slice(s![.., 0, .., ..]);
        }
        let needs = self.needs(x) || self.needs(alpha);
        self.push(value, Op::MulAlpha { x, alpha }, needs)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let cs = S::from_f64(c);
        let value = self.value(x).mapv(|v| v * cs);
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, c: cs }, needs)
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, c: f64) -> NodeId {
        let cs = S::from_f64(c);
        let mut value = self.value(a).clone();
        value.scaled_add(cs, self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::AddScaled { a, b, c: cs }, needs)
    }

    pub fn sub_scalar_node(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let sv = self.scalar(s);
        let value = self.value(x).mapv(|v| v - sv);
        let needs = self.needs(x) || self.needs(s);
        self.push(value, Op::SubScalarNode { x, s }, needs)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = S::from_f64(xv.len() as f64);
        let sum = xv.iter().fold(S::zero(), |a, &v| a + v);
        let value = Array4::from_elem((1, 1, 1, 1), sum / n);
        let needs = self.needs(x);
        self.push(value, Op::MeanAll { x }, needs)
    }

    pub fn concat_c(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let (b, _, h, w) = self.value(parts[0]).dim();
        let total_c: usize = parts.iter().map(|&p| self.value(p).dim().1).sum();
        let mut value = Array4::<S>::zeros((b, total_c, h, w));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            let pc = pv.dim().1;
            value.slice_mut(s![.., at..at + pc, .., ..]).assign(pv);
            at += pc;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatC { parts: parts.to_vec() }, needs)
    }

    pub fn concat_b(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let (_, c, h, w) = self.value(parts[0]).dim();
        let total_b: usize = parts.iter().map(|&p| self.value(p).dim().0).sum();
        let mut value = Array4::<S>::zeros((total_b, c, h, w));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            let pb = pv.dim().0;
            value.slice_mut(s![at..at + pb, .., .., ..]).assign(pv);
            at += pb;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatB { parts: parts.to_vec() }, needs)
    }

    pub fn slice_b(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.value(x).slice(s![start..start + len, .., .., ..]).to_owned();
        let needs = self.needs(x);
        self.push(value, Op::SliceB { x, start, len }, needs)
    }

    pub fn upsample_nearest2(&mut self, x: NodeId) -> NodeId {
        let value = kernels::upsample_nearest2(self.value(x));
        let needs = self.needs(x);
        self.push(value, Op::UpNearest2 { x }, needs)
    }

    pub fn upsample_bilinear2(&mut self, x: NodeId) -> NodeId {
        let value = kernels::upsample_bilinear2(self.value(x));
        let needs = self.needs(x);
        self.push(value, Op::UpBilinear2 { x }, needs)
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        let value = kernels::avg_pool2(self.value(x));
        let needs = self.needs(x);
        self.push(value, Op::AvgPool2 { x }, needs)
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor<S>) {
        if !self.needs(id) {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Backpropagate from a scalar root. Gradients of all `needs_grad` nodes
    /// are available through `grad` afterwards.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Array4::from_elem((1, 1, 1, 1), S::one()));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.apply_backward(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn apply_backward(&mut self, i: usize, g: &Tensor<S>) {
        // borrow dance: pull out what we need before mutating grads
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad, mode, sn } => {
                let (x, w, b, stride, pad, mode) = (*x, *w, *b, *stride, *pad, *mode);
                let sn_data = sn.clone();
                let w_used = match &sn_data {
                    Some(s) => s.w_normalized.clone(),
                    None => self.value(w).clone(),
                };
                if self.needs(x) {
                    let gx =
                        kernels::conv2d_backward_x(g, &w_used, self.value(x).dim(), stride, pad, mode);
                    self.accumulate(x, gx);
                }
                if self.needs(w) {
                    let mut gw =
                        kernels::conv2d_backward_w(g, self.value(x), w_used.dim(), stride, pad, mode);
                    if let Some(sn) = &sn_data {
                        // W_hat = W / sigma with sigma = u^T W v =>
                        // dL/dW = G/sigma - (<G, W_hat>/sigma) u v^T
                        let inner = gw
                            .iter()
                            .zip(sn.w_normalized.iter())
                            .fold(S::zero(), |a, (&gi, &wi)| a + gi * wi);
                        let scale = S::one() / sn.sigma;
                        let coef = inner * scale;
                        let (cout, cin, k, _) = gw.dim();
                        let ckk = cin * k * k;
                        let mut flat = gw.into_shape_with_order((cout, ckk)).unwrap();
                        for (r, urow) in sn.u.iter().enumerate().take(cout) {
                            for (c, vcol) in sn.v.iter().enumerate().take(ckk) {
                                flat[[r, c]] = flat[[r, c]] * scale - coef * *urow * *vcol;
                            }
                        }
                        gw = flat.into_shape_with_order((cout, cin, k, k)).unwrap();
                    }
                    self.accumulate(w, gw);
                }
                if let Some(bb) = b {
                    if self.needs(bb) {
                        let gb = kernels::conv2d_backward_b(g);
                        self.accumulate(bb, gb);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let (x, slope) = (*x, *slope);
                let mut gx = g.clone();
                Zip::from(&mut gx).and(self.value(x)).for_each(|gv, &xv| {
                    if xv <= S::zero() {
                        *gv = *gv * slope;
                    }
                });
                self.accumulate(x, gx);
            }
            Op::Relu { x } => {
                let x = *x;
                let mut gx = g.clone();
                Zip::from(&mut gx).and(self.value(x)).for_each(|gv, &xv| {
                    if xv <= S::zero() {
                        *gv = S::zero();
                    }
                });
                self.accumulate(x, gx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let y = self.nodes[i].value.clone();
                let gx = Zip::from(g).and(&y).map_collect(|&gv, &yv| gv * yv * (S::one() - yv));
                self.accumulate(x, gx);
            }
            Op::Softplus { x } => {
                let x = *x;
                let gx = Zip::from(g)
                    .and(self.value(x))
                    .map_collect(|&gv, &xv| gv * kernels::sigmoid(xv));
                self.accumulate(x, gx);
            }
            Op::Abs { x } => {
                let x = *x;
                let gx = Zip::from(g).and(self.value(x)).map_collect(|&gv, &xv| {
                    if xv > S::zero() {
                        gv
                    } else if xv < S::zero() {
                        -gv
                    } else {
                        S::zero()
                    }
                });
                self.accumulate(x, gx);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.mapv(|v| -v));
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let ga = g * self.value(b);
                    self.accumulate(a, ga);
                }
                if self.needs(b) {
                    let gb = g * self.value(a);
                    self.accumulate(b, gb);
                }
            }
            Op::MulAlpha { x, alpha } => {
                let (x, alpha) = (*x, *alpha);
                if self.needs(x) {
                    let av = self.value(alpha).clone();
                    let mut gx = g.clone();
                    for c in 0..gx.dim().1 {
                        let mut lane = gx.slice_mut(s![.., c, .., ..]);
                        lane *= &av.slice(s![.., 0, .., ..]);
                    }
                    self.accumulate(x, gx);
                }
                if self.needs(alpha) {
                    let prod = g * self.value(x);
                    let ga4 = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(alpha, ga4);
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                self.accumulate(x, g.mapv(|v| v * c));
            }
            Op::AddScaled { a, b, c } => {
                let (a, b, c) = (*a, *b, *c);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.mapv(|v| v * c));
            }
            Op::SubScalarNode { x, s } => {
                let (x, s) = (*x, *s);
                self.accumulate(x, g.clone());
                if self.needs(s) {
                    let total = g.iter().fold(S::zero(), |acc, &v| acc + v);
                    self.accumulate(s, Array4::from_elem((1, 1, 1, 1), -total));
                }
            }
            Op::MeanAll { x } => {
                let x = *x;
                let n = S::from_f64(self.value(x).len() as f64);
                let gv = g[[0, 0, 0, 0]] / n;
                let gx = Array4::from_elem(self.value(x).dim(), gv);
                self.accumulate(x, gx);
            }
            Op::ConcatC { parts } => {
                let parts = parts.clone();
                let mut at = 0;
                for p in parts {
                    let pc = self.value(p).dim().1;
                    let gp = g.slice(s![.., at..at + pc, .., ..]).to_owned();
                    at += pc;
                    self.accumulate(p, gp);
                }
            }
            Op::ConcatB { parts } => {
                let parts = parts.clone();
                let mut at = 0;
                for p in parts {
                    let pb = self.value(p).dim().0;
                    let gp = g.slice(s![at..at + pb, .., .., ..]).to_owned();
                    at += pb;
                    self.accumulate(p, gp);
                }
            }
            Op::SliceB { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                let mut gx = Array4::<S>::zeros(self.value(x).dim());
                gx.slice_mut(s![start..start + len, .., .., ..]).assign(g);
                self.accumulate(x, gx);
            }
            Op::UpNearest2 { x } => {
                let x = *x;
                let gx = kernels::upsample_nearest2_backward(g, self.value(x).dim());
                self.accumulate(x, gx);
            }
            Op::UpBilinear2 { x } => {
                let x = *x;
                let gx = kernels::upsample_bilinear2_backward(g, self.value(x).dim());
                self.accumulate(x, gx);
            }
            Op::AvgPool2 { x } => {
                let x = *x;
                let gx = kernels::avg_pool2_backward(g, self.value(x).dim());
                self.accumulate(x, gx);
            }
        }
    }
}
