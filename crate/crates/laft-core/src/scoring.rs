//! Anomaly score maps and image-level scores from reconstruction error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{avg_pool, bilinear_resize, gaussian_smooth, GaussianKernel, Tensor};

/// A nonnegative `[H, W]` anomaly score map.
#[derive(Debug, Clone)]
pub struct ScoreMap {
    map: Tensor,
}

impl ScoreMap {
    pub fn new(map: Tensor) -> Result<Self> {
        if map.rank() != 2 {
            return Err(Error::shape(format!("score map must be [h,w], got {:?}", map.shape())));
        }
        if map.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("score map must be nonnegative and finite"));
        }
        Ok(Self { map })
    }

    pub fn map(&self) -> &Tensor {
        &self.map
    }

    pub fn shape(&self) -> &[usize] {
        self.map.shape()
    }
}

/// Per-position squared reconstruction error over channels, upsampled to
/// `(out_h, out_w)` bilinearly and smoothed with a Gaussian of deviation
/// `sigma`.
pub fn score_map(
    x0: &Tensor,
    x0_rec: &Tensor,
    out_h: usize,
    out_w: usize,
    sigma: f64,
) -> Result<ScoreMap> {
    if x0.shape() != x0_rec.shape() {
        return Err(Error::shape(format!(
            "original {:?} vs reconstruction {:?}",
            x0.shape(),
            x0_rec.shape()
        )));
    }
    let err = x0_rec.sub(x0)?.channel_sq_norm()?;
    let (h, w) = (err.shape()[0], err.shape()[1]);
    let up = if (h, w) == (out_h, out_w) {
        err
    } else {
        let as3 = err.reshaped(&[h, w, 1])?;
        bilinear_resize(&as3, out_h, out_w)?.reshaped(&[out_h, out_w])?
    };
    let kernel = GaussianKernel::new(sigma)?;
    let smoothed = gaussian_smooth(&up, &kernel)?;
    // Zero-padding cannot produce negatives from a nonnegative map, but f32
    // rounding can leave dust like -0.0.
    let cleaned = Tensor::new(
        smoothed.shape().to_vec(),
        smoothed.data().iter().map(|&v| v.max(0.0)).collect(),
    )?;
    ScoreMap::new(cleaned)
}

/// Image-level score: maximum of the mean-pooled map (window `pool_k`,
/// stride 1).
pub fn image_score(s: &ScoreMap, pool_k: usize) -> Result<f64> {
    let pooled = avg_pool(s.map(), pool_k, 1)?;
    Ok(pooled.max_value() as f64)
}

/// Renders a map to 8-bit grayscale PGM (P5), mapping `[lo, hi]` to 0..255.
pub fn pgm_bytes(map: &Tensor, lo: f64, hi: f64) -> Result<Vec<u8>> {
    let &[h, w] = map.shape() else {
        return Err(Error::shape(format!("PGM expects [h,w], got {:?}", map.shape())));
    };
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in map.data() {
        let norm = if span > 0.0 {
            ((v as f64 - lo) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push((norm * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, map: &Tensor, lo: f64, hi: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&pgm_bytes(map, lo, hi)?)?;
    w.flush()?;
    Ok(())
}
