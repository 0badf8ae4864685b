//! Reverse-mode automatic differentiation on a flat tape, plus the denoiser
//! networks built with it.
//!
//! The op set is exactly what the denoisers need: affine transform, 3x3
//! convolution (stride 1, zero padding), SiLU, elementwise add/sub, constant
//! scale, broadcast vector adds (time embedding), 2x average-pool down and
//! nearest-neighbor up, channel concat, reshape, and a sum-of-squares
//! reduction for the loss head. Gradients accumulate in f64 and are rounded
//! to f32 once per node.

mod analytic;
mod embed;
mod nets;
mod params;
mod train;

pub use analytic::AnalyticGaussianDenoiser;
pub use embed::sinusoidal_embedding;
pub use nets::{Architecture, DenoiserConfig, NetDenoiser};
pub use params::{AdamWConfig, Param, ParameterSet};
pub use train::{train, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A noise predictor: estimates the eps that corrupted `x_t` at step `t`.
pub trait Denoiser: Sync {
    /// Largest valid step.
    fn t_max(&self) -> usize;

    /// Predicts eps for `x_t` at step `t` in `[1, t_max]`; output has the
    /// shape of the input.
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor>;
}

pub(crate) fn check_step(t: usize, t_max: usize) -> Result<()> {
    if t == 0 || t > t_max {
        return Err(Error::invalid(format!("step {t} outside [1, {t_max}]")));
    }
    Ok(())
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: usize, w: usize, b: usize },
    Conv3x3 { x: usize, w: usize, b: usize },
    Silu { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddRowVec { x: usize, v: usize },
    AddChanVec { x: usize, v: usize },
    AvgPool2 { x: usize },
    NearestUp2 { x: usize },
    ConcatCh { a: usize, b: usize },
    Reshape { x: usize },
    SumSquares { x: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// A forward computation recorded for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the vector itself is a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// `y = x @ w + b` with `x: [n, din]`, `w: [din, dout]`, `b: [dout]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        let (&[n, din], &[wdin, dout], &[bdout]) = (&xs[..], &ws[..], &bs[..]) else {
            return Err(Error::shape(format!(
                "affine expects [n,din]@[din,dout]+[dout], got {xs:?} {ws:?} {bs:?}"
            )));
        };
        if din != wdin || dout != bdout {
            return Err(Error::shape(format!(
                "affine dims disagree: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let (xv, wv, bv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0f32; n * dout];
        for i in 0..n {
            for o in 0..dout {
                let mut acc = bv[o] as f64;
                for k in 0..din {
                    acc += xv[i * din + k] as f64 * wv[k * dout + o] as f64;
                }
                out[i * dout + o] = acc as f32;
            }
        }
        Ok(self.push(
            Op::Affine { x: x.0, w: w.0, b: b.0 },
            Tensor::from_parts(vec![n, dout], out),
        ))
    }

    /// 3x3 convolution, stride 1, zero padding 1:
    /// `x: [h,w,cin]`, `w: [3,3,cin,cout]`, `b: [cout]` -> `[h,w,cout]`.
    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        let (&[h, wd, cin], &[3, 3, wcin, cout], &[bcout]) = (&xs[..], &ws[..], &bs[..]) else {
            return Err(Error::shape(format!(
                "conv3x3 expects [h,w,cin], [3,3,cin,cout], [cout]; got {xs:?} {ws:?} {bs:?}"
            )));
        };
        if cin != wcin || cout != bcout {
            return Err(Error::shape(format!(
                "conv3x3 channels disagree: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let (xv, wv, bv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0f32; h * wd * cout];
        for oy in 0..h {
            for ox in 0..wd {
                for o in 0..cout {
                    let mut acc = bv[o] as f64;
                    for dy in 0..3usize {
                        let sy = oy + dy;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        for dx in 0..3usize {
                            let sx = ox + dx;
                            if sx < 1 || sx > wd {
                                continue;
                            }
                            let sx = sx - 1;
                            let xbase = (sy * wd + sx) * cin;
                            let wbase = ((dy * 3 + dx) * cin) * cout;
                            for k in 0..cin {
                                acc += xv[xbase + k] as f64 * wv[wbase + k * cout + o] as f64;
                            }
                        }
                    }
                    out[(oy * wd + ox) * cout + o] = acc as f32;
                }
            }
        }
        Ok(self.push(
            Op::Conv3x3 { x: x.0, w: w.0, b: b.0 },
            Tensor::from_parts(vec![h, wd, cout], out),
        ))
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let out = self
            .value(x)
            .data()
            .iter()
            .map(|&v| {
                let v = v as f64;
                (v / (1.0 + (-v).exp())) as f32
            })
            .collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::Silu { x: x.0 }, Tensor::from_parts(shape, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let val = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, val))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let val = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, val))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let val = self.value(x).scale(c);
        self.push(Op::Scale { x: x.0, c }, val)
    }

    /// Adds a `[d]` vector to every row of a `[n, d]` matrix.
    pub fn add_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (xs, vs) = (self.value(x).shape().to_vec(), self.value(v).shape().to_vec());
        let (&[n, d], &[vd]) = (&xs[..], &vs[..]) else {
            return Err(Error::shape(format!(
                "add_row_vec expects [n,d] + [d], got {xs:?} {vs:?}"
            )));
        };
        if d != vd {
            return Err(Error::shape(format!("row width {d} vs vector {vd}")));
        }
        let (xv, vv) = (self.value(x).data(), self.value(v).data());
        let mut out = vec![0.0f32; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = xv[i * d + j] + vv[j];
            }
        }
        Ok(self.push(
            Op::AddRowVec { x: x.0, v: v.0 },
            Tensor::from_parts(vec![n, d], out),
        ))
    }

    /// Adds a `[c]` vector to every spatial position of a `[h,w,c]` tensor.
    pub fn add_chan_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (xs, vs) = (self.value(x).shape().to_vec(), self.value(v).shape().to_vec());
        let (&[h, w, c], &[vc]) = (&xs[..], &vs[..]) else {
            return Err(Error::shape(format!(
                "add_chan_vec expects [h,w,c] + [c], got {xs:?} {vs:?}"
            )));
        };
        if c != vc {
            return Err(Error::shape(format!("channels {c} vs vector {vc}")));
        }
        let (xv, vv) = (self.value(x).data(), self.value(v).data());
        let mut out = vec![0.0f32; h * w * c];
        for p in 0..h * w {
            for ch in 0..c {
                out[p * c + ch] = xv[p * c + ch] + vv[ch];
            }
        }
        Ok(self.push(
            Op::AddChanVec { x: x.0, v: v.0 },
            Tensor::from_parts(vec![h, w, c], out),
        ))
    }

    /// 2x2 average pooling with stride 2 on `[h,w,c]`; h and w must be even.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let &[h, w, c] = &xs[..] else {
            return Err(Error::shape(format!("avg_pool2 expects [h,w,c], got {xs:?}")));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 needs even dims, got [{h},{w}]")));
        }
        let xv = self.value(x).data();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += xv[((2 * oy + dy) * w + 2 * ox + dx) * c + ch] as f64;
                        }
                    }
                    out[(oy * ow + ox) * c + ch] = (acc * 0.25) as f32;
                }
            }
        }
        Ok(self.push(
            Op::AvgPool2 { x: x.0 },
            Tensor::from_parts(vec![oh, ow, c], out),
        ))
    }

    /// Nearest-neighbor 2x upsampling on `[h,w,c]`.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let &[h, w, c] = &xs[..] else {
            return Err(Error::shape(format!("upsample2 expects [h,w,c], got {xs:?}")));
        };
        let xv = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0f32; oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((oy / 2) * w + ox / 2) * c;
                let dst = (oy * ow + ox) * c;
                out[dst..dst + c].copy_from_slice(&xv[src..src + c]);
            }
        }
        Ok(self.push(
            Op::NearestUp2 { x: x.0 },
            Tensor::from_parts(vec![oh, ow, c], out),
        ))
    }

    /// Concatenates two `[h,w,c]` tensors along channels.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let val = crate::tensor::concat_channels(&[self.value(a), self.value(b)])?;
        Ok(self.push(Op::ConcatCh { a: a.0, b: b.0 }, val))
    }

    /// Views a node under a new shape with the same element count.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let val = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape { x: x.0 }, val))
    }

    /// Scalar sum of squared elements, shape `[1]`.
    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum_squares() as f32;
        self.push(Op::SumSquares { x: x.0 }, Tensor::from_parts(vec![1], vec![s]))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::invalid("backward root must be a scalar node"));
        }
        self.backward_seeded(root, &Tensor::from_parts(vec![1], vec![1.0]))
    }

    /// Backward pass from `root` seeded with an explicit output gradient.
    pub fn backward_seeded(&self, root: NodeId, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape(format!(
                "seed shape {:?} differs from root {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        // f64 accumulators per node, materialized lazily.
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        acc[root.0] = Some(seed.data().iter().map(|&v| v as f64).collect());

        for idx in (0..=root.0).rev() {
            let Some(gy) = acc[idx].take() else {
                continue;
            };
            self.accumulate_inputs(idx, &gy, &mut acc);
            acc[idx] = Some(gy);
        }

        let grads = acc
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|v| {
                    Tensor::from_parts(
                        self.nodes[i].value.shape().to_vec(),
                        v.into_iter().map(|x| x as f32).collect(),
                    )
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn ensure<'a>(
        acc: &'a mut [Option<Vec<f64>>],
        idx: usize,
        len: usize,
    ) -> &'a mut Vec<f64> {
        acc[idx].get_or_insert_with(|| vec![0.0; len])
    }

    fn accumulate_inputs(&self, idx: usize, gy: &[f64], acc: &mut [Option<Vec<f64>>]) {
        match self.nodes[idx].op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xs = self.nodes[x].value.shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = self.nodes[b].value.len();
                let xv = self.nodes[x].value.data();
                let wv = self.nodes[w].value.data();
                {
                    let gx = Self::ensure(acc, x, n * din);
                    for i in 0..n {
                        for k in 0..din {
                            let mut s = 0.0;
                            for o in 0..dout {
                                s += gy[i * dout + o] * wv[k * dout + o] as f64;
                            }
                            gx[i * din + k] += s;
                        }
                    }
                }
                {
                    let gw = Self::ensure(acc, w, din * dout);
                    for k in 0..din {
                        for o in 0..dout {
                            let mut s = 0.0;
                            for i in 0..n {
                                s += xv[i * din + k] as f64 * gy[i * dout + o];
                            }
                            gw[k * dout + o] += s;
                        }
                    }
                }
                let gb = Self::ensure(acc, b, dout);
                for o in 0..dout {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += gy[i * dout + o];
                    }
                    gb[o] += s;
                }
            }
            Op::Conv3x3 { x, w, b } => {
                let xs = self.nodes[x].value.shape();
                let (h, wd, cin) = (xs[0], xs[1], xs[2]);
                let cout = self.nodes[b].value.len();
                let xv = self.nodes[x].value.data();
                let wv = self.nodes[w].value.data();
                // Split borrows: work on local buffers then merge.
                let mut gx = vec![0.0f64; h * wd * cin];
                let mut gw = vec![0.0f64; 9 * cin * cout];
                let mut gb = vec![0.0f64; cout];
                for oy in 0..h {
                    for ox in 0..wd {
                        for o in 0..cout {
                            let g = gy[(oy * wd + ox) * cout + o];
                            gb[o] += g;
                            for dy in 0..3usize {
                                let sy = oy + dy;
                                if sy < 1 || sy > h {
                                    continue;
                                }
                                let sy = sy - 1;
                                for dx in 0..3usize {
                                    let sx = ox + dx;
                                    if sx < 1 || sx > wd {
                                        continue;
                                    }
                                    let sx = sx - 1;
                                    let xbase = (sy * wd + sx) * cin;
                                    let wbase = (dy * 3 + dx) * cin * cout;
                                    for k in 0..cin {
                                        gx[xbase + k] += wv[wbase + k * cout + o] as f64 * g;
                                        gw[wbase + k * cout + o] += xv[xbase + k] as f64 * g;
                                    }
                                }
                            }
                        }
                    }
                }
                for (dst, src) in Self::ensure(acc, x, h * wd * cin).iter_mut().zip(&gx) {
                    *dst += src;
                }
                for (dst, src) in Self::ensure(acc, w, 9 * cin * cout).iter_mut().zip(&gw) {
                    *dst += src;
                }
                for (dst, src) in Self::ensure(acc, b, cout).iter_mut().zip(&gb) {
                    *dst += src;
                }
            }
            Op::Silu { x } => {
                let xv = self.nodes[x].value.data();
                let gx = Self::ensure(acc, x, xv.len());
                for (i, &v) in xv.iter().enumerate() {
                    let v = v as f64;
                    let sig = 1.0 / (1.0 + (-v).exp());
                    gx[i] += gy[i] * sig * (1.0 + v * (1.0 - sig));
                }
            }
            Op::Add { a, b } => {
                for (dst, src) in Self::ensure(acc, a, gy.len()).iter_mut().zip(gy) {
                    *dst += src;
                }
                for (dst, src) in Self::ensure(acc, b, gy.len()).iter_mut().zip(gy) {
                    *dst += src;
                }
            }
            Op::Sub { a, b } => {
                for (dst, src) in Self::ensure(acc, a, gy.len()).iter_mut().zip(gy) {
                    *dst += src;
                }
                for (dst, src) in Self::ensure(acc, b, gy.len()).iter_mut().zip(gy) {
                    *dst -= src;
                }
            }
            Op::Scale { x, c } => {
                for (dst, src) in Self::ensure(acc, x, gy.len()).iter_mut().zip(gy) {
                    *dst += c * src;
                }
            }
            Op::AddRowVec { x, v } => {
                let d = self.nodes[v].value.len();
                let n = gy.len() / d;
                for (dst, src) in Self::ensure(acc, x, gy.len()).iter_mut().zip(gy) {
                    *dst += src;
                }
                let gv = Self::ensure(acc, v, d);
                for i in 0..n {
                    for j in 0..d {
                        gv[j] += gy[i * d + j];
                    }
                }
            }
            Op::AddChanVec { x, v } => {
                let c = self.nodes[v].value.len();
                let positions = gy.len() / c;
                for (dst, src) in Self::ensure(acc, x, gy.len()).iter_mut().zip(gy) {
                    *dst += src;
                }
                let gv = Self::ensure(acc, v, c);
                for p in 0..positions {
                    for ch in 0..c {
                        gv[ch] += gy[p * c + ch];
                    }
                }
            }
            Op::AvgPool2 { x } => {
                let xs = self.nodes[x].value.shape();
                let (h, w, c) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h / 2, w / 2);
                let gx = Self::ensure(acc, x, h * w * c);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let g = 0.25 * gy[(oy * ow + ox) * c + ch];
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    gx[((2 * oy + dy) * w + 2 * ox + dx) * c + ch] += g;
                                }
                            }
                        }
                    }
                }
            }
            Op::NearestUp2 { x } => {
                let xs = self.nodes[x].value.shape();
                let (h, w, c) = (xs[0], xs[1], xs[2]);
                let ow = 2 * w;
                let gx = Self::ensure(acc, x, h * w * c);
                for oy in 0..2 * h {
                    for ox in 0..ow {
                        let src = ((oy / 2) * w + ox / 2) * c;
                        let dst = (oy * ow + ox) * c;
                        for ch in 0..c {
                            gx[src + ch] += gy[dst + ch];
                        }
                    }
                }
            }
            Op::ConcatCh { a, b } => {
                let ca = self.nodes[a].value.shape()[2];
                let cb = self.nodes[b].value.shape()[2];
                let positions = gy.len() / (ca + cb);
                {
                    let ga = Self::ensure(acc, a, positions * ca);
                    for p in 0..positions {
                        for ch in 0..ca {
                            ga[p * ca + ch] += gy[p * (ca + cb) + ch];
                        }
                    }
                }
                let gb = Self::ensure(acc, b, positions * cb);
                for p in 0..positions {
                    for ch in 0..cb {
                        gb[p * cb + ch] += gy[p * (ca + cb) + ca + ch];
                    }
                }
            }
            Op::Reshape { x } => {
                for (dst, src) in Self::ensure(acc, x, gy.len()).iter_mut().zip(gy) {
                    *dst += src;
                }
            }
            Op::SumSquares { x } => {
                let xv = self.nodes[x].value.data();
                let gx = Self::ensure(acc, x, xv.len());
                for (i, &v) in xv.iter().enumerate() {
                    gx[i] += 2.0 * v as f64 * gy[0];
                }
            }
        }
    }
}
