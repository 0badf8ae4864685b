//! Forward corruption, the training objective, the posterior mean, the DDIM
//! update, and partial-corruption reconstruction.

use rand::Rng;

use crate::autodiff::Denoiser;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Which denominator the predicted-x0 term of the DDIM update uses.
///
/// The update is published with `abar_t` in that denominator; the DDIM
/// sampler it derives from uses `sqrt(abar_t)`. Both are selectable so either
/// behavior can be tested; `Sqrt` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum X0Denominator {
    #[default]
    Sqrt,
    AsPrinted,
}

impl X0Denominator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Self::Sqrt),
            "as_printed" => Ok(Self::AsPrinted),
            other => Err(Error::config(format!(
                "reconstruct.x0_denominator must be sqrt or as_printed, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sqrt => "sqrt",
            Self::AsPrinted => "as_printed",
        }
    }

    fn apply(&self, abar: f64) -> f64 {
        match self {
            Self::Sqrt => abar.sqrt(),
            Self::AsPrinted => abar,
        }
    }
}

/// Inference-time reconstruction settings.
#[derive(Debug, Clone, Copy)]
pub struct ReconstructConfig {
    /// Maximum corruption step tau.
    pub tau: usize,
    /// Sampling stride; the final stride truncates to land exactly on 0.
    pub dt: usize,
    pub x0_denominator: X0Denominator,
}

impl ReconstructConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.tau == 0 || self.tau > sched.t_max() {
            return Err(Error::invalid(format!(
                "tau {} outside [1, {}]",
                self.tau,
                sched.t_max()
            )));
        }
        if self.dt == 0 || self.dt > self.tau {
            return Err(Error::invalid(format!(
                "stride {} outside [1, tau = {}]",
                self.dt, self.tau
            )));
        }
        Ok(())
    }
}

/// One forward Markov step: a sample of `N(sqrt(1 - beta_t) x_prev, beta_t I)`.
pub fn forward_step(
    x_prev: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let beta = sched.beta(t)?;
    let noise = Tensor::standard_normal(x_prev.shape(), rng);
    x_prev.lincomb((1.0 - beta).sqrt(), &noise, beta.sqrt())
}

/// The forward marginal applied exactly:
/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn corrupt(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    let abar = sched.alpha_bar(t)?;
    if t == 0 {
        return Err(Error::invalid("corruption step must be at least 1"));
    }
    x0.lincomb(abar.sqrt(), eps, (1.0 - abar).sqrt())
}

/// The eps-regression objective for one example:
/// `||eps - eps_hat(corrupt(x0, t, eps), t)||^2` (sum of squared elements).
pub fn training_loss(
    denoiser: &dyn Denoiser,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let x_t = corrupt(x0, t, eps, sched)?;
    let eps_hat = denoiser.predict_eps(&x_t, t)?;
    Ok(eps.sub(&eps_hat)?.sum_squares())
}

/// The trainable posterior mean:
/// `mu = (x_t - (beta_t / sqrt(1 - abar_t)) eps_hat) / alpha_t`.
pub fn posterior_mean(
    x_t: &Tensor,
    t: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let beta = sched.beta(t)?;
    let alpha = sched.alpha(t)?;
    let abar = sched.alpha_bar(t)?;
    let eps_hat = denoiser.predict_eps(x_t, t)?;
    let inner = x_t.lincomb(1.0, &eps_hat, -beta / (1.0 - abar).sqrt())?;
    Ok(inner.scale(1.0 / alpha))
}

/// One DDIM update from step `t` to `t - dt`:
/// `x_{t-dt} = sqrt(abar_{t-dt}) x0_hat + sqrt(1 - abar_{t-dt} - sigma_t^2) eps_hat + sigma_t z`,
/// with `x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / D(abar_t)` and the noise
/// term omitted when `sigma_t = 0`.
pub fn ddim_step(
    x_t: &Tensor,
    t: usize,
    dt: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    mode: X0Denominator,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let abar_t = sched.alpha_bar(t)?;
    if dt == 0 || dt > t {
        return Err(Error::invalid(format!("stride {dt} outside [1, {t}]")));
    }
    let abar_prev = sched.alpha_bar(t - dt)?;
    let sigma = sched.sigma(t, dt)?;
    let dir_sq = 1.0 - abar_prev - sigma * sigma;
    if dir_sq < -1e-12 {
        return Err(Error::NumericDomain(format!(
            "1 - abar_{{t-dt}} - sigma^2 = {dir_sq} is negative at t = {t}, dt = {dt}"
        )));
    }
    let dir = dir_sq.max(0.0).sqrt();

    let eps_hat = denoiser.predict_eps(x_t, t)?;
    let denom = mode.apply(abar_t);
    // x0_hat scaled into the output in one pass: coefficient on x_t is
    // sqrt(abar_prev)/denom, on eps_hat it is dir - sqrt(abar_prev)
    // * sqrt(1-abar_t)/denom.
    let coef_x = abar_prev.sqrt() / denom;
    let coef_eps = dir - abar_prev.sqrt() * (1.0 - abar_t).sqrt() / denom;
    let mut out = x_t.lincomb(coef_x, &eps_hat, coef_eps)?;
    if sigma > 0.0 {
        let z = Tensor::standard_normal(x_t.shape(), rng);
        out = out.lincomb(1.0, &z, sigma)?;
    }
    Ok(out)
}

/// Partial-corruption reconstruction: corrupt the input to step `tau`, then
/// run DDIM updates down to 0 (final stride truncated to land exactly on 0).
pub fn reconstruct(
    x_init: &Tensor,
    cfg: &ReconstructConfig,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    cfg.validate(sched)?;
    let eps = Tensor::standard_normal(x_init.shape(), rng);
    let mut x = corrupt(x_init, cfg.tau, &eps, sched)?;
    let mut t = cfg.tau;
    while t > 0 {
        let dt = cfg.dt.min(t);
        x = ddim_step(&x, t, dt, denoiser, sched, cfg.x0_denominator, rng)?;
        t -= dt;
    }
    Ok(x)
}
