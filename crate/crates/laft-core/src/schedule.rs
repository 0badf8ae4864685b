//! Noise-schedule construction and the closed-form diffusion coefficients.
//!
//! All coefficients are kept in f64. Index 0 of the cumulative product is the
//! identity anchor (value 1), so expressions that reference step `t - dt` stay
//! valid when they land on 0.

use crate::error::{Error, Result};

/// Precomputed diffusion schedule: beta_t, alpha_t = 1 - beta_t and the
/// cumulative product alpha_bar_t for t in [1, T], plus the DDIM eta.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_max: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    /// alpha_bar[t] for t in 0..=T, with alpha_bar[0] = 1.
    alpha_bar: Vec<f64>,
    eta: f64,
}

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clip applied to beta to avoid a degenerate final step.
pub const BETA_CLIP: f64 = 0.999;

/// The cosine alpha-bar profile: f(t)/f(0) with
/// f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), s = 0.008.
pub fn cosine_alpha_bar(t: usize, t_max: usize) -> f64 {
    let f = |u: f64| {
        let arg = (u / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)
            * std::f64::consts::FRAC_PI_2;
        arg.cos().powi(2)
    };
    f(t as f64) / f(0.0)
}

impl NoiseSchedule {
    /// Builds the cosine schedule for `t_max` steps with stochasticity `eta`.
    ///
    /// beta_t = 1 - abar(t)/abar(t-1) clipped to 0.999; alpha_bar is then the
    /// running product of the resulting alphas, so the product invariant is
    /// exact even where the clip binds.
    pub fn cosine(t_max: usize, eta: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(eta >= 0.0) {
            return Err(Error::invalid(format!("eta must be nonnegative, got {eta}")));
        }
        let mut beta = Vec::with_capacity(t_max);
        let mut alpha = Vec::with_capacity(t_max);
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut prev = cosine_alpha_bar(0, t_max);
        let mut prod = 1.0f64;
        for t in 1..=t_max {
            let cur = cosine_alpha_bar(t, t_max);
            let b = (1.0 - cur / prev).min(BETA_CLIP);
            let a = 1.0 - b;
            prod *= a;
            beta.push(b);
            alpha.push(a);
            alpha_bar.push(prod);
            prev = cur;
        }
        Ok(Self {
            t_max,
            beta,
            alpha,
            alpha_bar,
            eta,
        })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Returns a copy with a different eta (the schedule itself is eta-free).
    pub fn with_eta(&self, eta: f64) -> Self {
        Self {
            eta,
            ..self.clone()
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max {
            return Err(Error::invalid(format!(
                "step {t} outside [1, {}]",
                self.t_max
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha[t - 1])
    }

    /// alpha_bar at `t`, valid for t in [0, T]; alpha_bar(0) = 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t > self.t_max {
            return Err(Error::invalid(format!(
                "step {t} outside [0, {}]",
                self.t_max
            )));
        }
        Ok(self.alpha_bar[t])
    }

    /// The DDIM noise coefficient
    /// sigma_t = eta * sqrt((1-abar_{t-dt})/(1-abar_t)) * sqrt(1 - abar_t/abar_{t-dt}).
    pub fn sigma(&self, t: usize, dt: usize) -> Result<f64> {
        self.check_t(t)?;
        if dt == 0 || dt > t {
            return Err(Error::invalid(format!("stride {dt} outside [1, {t}]")));
        }
        let abar_t = self.alpha_bar[t];
        let abar_prev = self.alpha_bar[t - dt];
        let ratio = (1.0 - abar_prev) / (1.0 - abar_t);
        Ok(self.eta * ratio.sqrt() * (1.0 - abar_t / abar_prev).sqrt())
    }
}
