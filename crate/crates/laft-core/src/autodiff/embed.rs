//! Sinusoidal step embedding.

use crate::tensor::Tensor;

/// Standard sin/cos embedding of an integer step into `dim` values.
///
/// The first half holds `sin(t * w_i)`, the second `cos(t * w_i)`, with
/// frequencies geometrically spaced from 1 down to 1/10000. `dim` must be
/// even and at least 2.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Tensor {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even and >= 2");
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = (-(10000.0f64).ln() * exponent).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin() as f32;
        out[half + i] = arg.cos() as f32;
    }
    Tensor::from_parts(vec![dim], out)
}
