//! Dense row-major f32 tensors and the small kernel set built on them:
//! bilinear resize, channel concat, Gaussian smoothing, average pooling,
//! and pointwise arithmetic.
//!
//! All accumulations (sums, means, dot products) run in f64 and are rounded
//! to f32 once at the end, with a fixed summation order, so results are
//! reproducible regardless of how callers schedule work.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense multi-dimensional array of f32 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking the shape/data invariants (positive dims,
    /// matching length, finite values).
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("shape {shape:?} has a zero or missing dimension")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {n} elements, buffer holds {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by our own kernels.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    /// Standard-normal tensor drawn from `rng` in flat row-major order.
    pub fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z as f32
            })
            .collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "cannot view {:?} as {shape:?}",
                self.shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    fn dim3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(format!("expected rank-3 [h,w,c], got {:?}", self.shape))),
        }
    }

    fn dim2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::shape(format!("expected rank-2 [h,w], got {:?}", self.shape))),
        }
    }

    /// Value at `[i, j, ch]` of a rank-3 tensor (unchecked in release).
    #[inline]
    pub fn at3(&self, i: usize, j: usize, ch: usize) -> f32 {
        let (_, w, c) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(i * w + j) * c + ch]
    }

    /// Value at `[i, j]` of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.shape[1] + j]
    }

    /// The `c`-vector slice at position `(i, j)` of a rank-3 tensor.
    pub fn slice_at(&self, i: usize, j: usize) -> &[f32] {
        let (_, w, c) = (self.shape[0], self.shape[1], self.shape[2]);
        let base = (i * w + j) * c;
        &self.data[base..base + c]
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "operands differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data.iter().map(|&v| (v as f64 * factor) as f32).collect();
        Tensor::from_parts(self.shape.clone(), data)
    }

    pub fn square(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v * v).collect();
        Tensor::from_parts(self.shape.clone(), data)
    }

    /// `a*self + b*other`, coefficients applied in f64.
    pub fn lincomb(&self, a: f64, other: &Tensor, b: f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| (a * x as f64 + b * y as f64) as f32)
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Sum of squared elements, accumulated in f64.
    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    /// Euclidean norm of the flattened tensor.
    pub fn norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    /// Per-position squared L2 norm over channels: `[h,w,c] -> [h,w]`.
    pub fn channel_sq_norm(&self) -> Result<Tensor> {
        let (h, w, c) = self.dim3()?;
        let mut out = vec![0.0f32; h * w];
        for p in 0..h * w {
            let base = p * c;
            let mut acc = 0.0f64;
            for ch in 0..c {
                let v = self.data[base + ch] as f64;
                acc += v * v;
            }
            out[p] = acc as f32;
        }
        Ok(Tensor::from_parts(vec![h, w], out))
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// Source coordinate for corner-aligned sampling: endpoints map to endpoints.
#[inline]
fn corner_aligned(out_idx: usize, in_len: usize, out_len: usize) -> f64 {
    if out_len == 1 {
        0.0
    } else {
        out_idx as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    }
}

/// Per-channel bilinear interpolation of `[h,w,c]` to `[out_h,out_w,c]`,
/// corner-aligned. Resizing to the input shape is the identity.
pub fn bilinear_resize(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = t.dim3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target dimension is zero"));
    }
    let mut out = vec![0.0f32; out_h * out_w * c];
    for oy in 0..out_h {
        let sy = corner_aligned(oy, h, out_h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = corner_aligned(ox, w, out_w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let v00 = t.at3(y0, x0, ch) as f64;
                let v01 = t.at3(y0, x1, ch) as f64;
                let v10 = t.at3(y1, x0, ch) as f64;
                let v11 = t.at3(y1, x1, ch) as f64;
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out[(oy * out_w + ox) * c + ch] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w, c], out))
}

/// Concatenates `[h,w,c_i]` tensors along the channel axis, in list order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels needs at least one input"))?;
    let (h, w, _) = first.dim3()?;
    let mut c_total = 0usize;
    for p in parts {
        let (ph, pw, pc) = p.dim3()?;
        if ph != h || pw != w {
            return Err(Error::shape(format!(
                "spatial dims differ: [{h},{w}] vs [{ph},{pw}]"
            )));
        }
        c_total += pc;
    }
    let mut out = vec![0.0f32; h * w * c_total];
    for pos in 0..h * w {
        let mut off = 0usize;
        for p in parts {
            let pc = p.shape()[2];
            let src = &p.data()[pos * pc..(pos + 1) * pc];
            out[pos * c_total + off..pos * c_total + off + pc].copy_from_slice(src);
            off += pc;
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c_total], out))
}

/// Extracts channel range `[from, to)` of a rank-3 tensor.
pub fn channel_slice(t: &Tensor, from: usize, to: usize) -> Result<Tensor> {
    let (h, w, c) = t.dim3()?;
    if from >= to || to > c {
        return Err(Error::invalid(format!("channel range {from}..{to} out of 0..{c}")));
    }
    let nc = to - from;
    let mut out = vec![0.0f32; h * w * nc];
    for pos in 0..h * w {
        out[pos * nc..(pos + 1) * nc].copy_from_slice(&t.data()[pos * c + from..pos * c + to]);
    }
    Ok(Tensor::from_parts(vec![h, w, nc], out))
}

/// Truncated, renormalized 2-D Gaussian filter.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Tensor,
}

impl GaussianKernel {
    /// Kernel truncated at `radius = ceil(4*sigma)` and renormalized to sum 1.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Self::with_radius(sigma, (4.0 * sigma).ceil() as usize)
    }

    pub fn with_radius(sigma: f64, radius: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if radius == 0 {
            return Err(Error::invalid("kernel radius must be at least 1"));
        }
        let side = 2 * radius + 1;
        let mut w = vec![0.0f64; side * side];
        let inv = 1.0 / (2.0 * sigma * sigma);
        let mut total = 0.0f64;
        for dy in 0..side {
            for dx in 0..side {
                let y = dy as f64 - radius as f64;
                let x = dx as f64 - radius as f64;
                let v = (-(x * x + y * y) * inv).exp();
                w[dy * side + dx] = v;
                total += v;
            }
        }
        let weights = w.iter().map(|&v| (v / total) as f32).collect();
        Ok(Self {
            sigma,
            radius,
            weights: Tensor::from_parts(vec![side, side], weights),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

/// Same-size convolution of a `[h,w]` map with a Gaussian kernel,
/// zero-padded at the borders.
pub fn gaussian_smooth(t: &Tensor, kernel: &GaussianKernel) -> Result<Tensor> {
    let (h, w) = t.dim2()?;
    let r = kernel.radius() as isize;
    let side = 2 * kernel.radius() + 1;
    let kw = kernel.weights().data();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0f64;
            for dy in -r..=r {
                let sy = y + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let sx = x + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let kidx = (dy + r) as usize * side + (dx + r) as usize;
                    acc += t.at2(sy as usize, sx as usize) as f64 * kw[kidx] as f64;
                }
            }
            out[y as usize * w + x as usize] = acc as f32;
        }
    }
    Ok(Tensor::from_parts(vec![h, w], out))
}

/// Average pooling of a `[h,w]` map with a `k x k` window.
pub fn avg_pool(t: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (h, w) = t.dim2()?;
    if k == 0 || stride == 0 {
        return Err(Error::invalid("pool window and stride must be positive"));
    }
    if k > h || k > w {
        return Err(Error::invalid(format!(
            "pool window {k} exceeds input [{h},{w}]"
        )));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let norm = 1.0 / (k * k) as f64;
    let mut out = vec![0.0f32; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0f64;
            for dy in 0..k {
                for dx in 0..k {
                    acc += t.at2(oy * stride + dy, ox * stride + dx) as f64;
                }
            }
            out[oy * ow + ox] = (acc * norm) as f32;
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow], out))
}
