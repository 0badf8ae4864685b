//! Closed-form denoiser for isotropic Gaussian data, used as a test oracle.

use super::{check_step, Denoiser};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Exact eps-posterior for `x_0 ~ N(mu, var * I)` under the forward marginal
/// `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`.
///
/// With `k_t = sqrt(abar_t) var / (abar_t var + 1 - abar_t)`:
/// `E[x_0 | x_t] = mu + k_t (x_t - sqrt(abar_t) mu)` and
/// `eps_hat = (x_t - sqrt(abar_t) E[x_0 | x_t]) / sqrt(1 - abar_t)`,
/// which minimizes the expected eps-regression loss for this distribution.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    mu: Tensor,
    var: f64,
    sched: NoiseSchedule,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mu: Tensor, var: f64, sched: NoiseSchedule) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::invalid(format!("variance must be positive, got {var}")));
        }
        Ok(Self { mu, var, sched })
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    /// Affine coefficients of the prediction: `eps_hat = a * (x_t - sqrt(abar) mu)`.
    pub fn slope(&self, t: usize) -> Result<f64> {
        let abar = self.sched.alpha_bar(t)?;
        let sq = abar.sqrt();
        let k = sq * self.var / (abar * self.var + 1.0 - abar);
        Ok((1.0 - sq * k) / (1.0 - abar).sqrt())
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn t_max(&self) -> usize {
        self.sched.t_max()
    }

    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        check_step(t, self.sched.t_max())?;
        if x_t.shape() != self.mu.shape() {
            return Err(Error::shape(format!(
                "input shape {:?} differs from mean {:?}",
                x_t.shape(),
                self.mu.shape()
            )));
        }
        let abar = self.sched.alpha_bar(t)?;
        let sq = abar.sqrt();
        let a = self.slope(t)?;
        let data = x_t
            .data()
            .iter()
            .zip(self.mu.data())
            .map(|(&x, &m)| (a * (x as f64 - sq * m as f64)) as f32)
            .collect();
        Ok(Tensor::from_parts(x_t.shape().to_vec(), data))
    }
}
