//! Denoiser training loop: uniform step sampling, eps-regression loss,
//! AdamW updates, and a late learning-rate drop.

use std::collections::BTreeMap;

use rand::Rng;

use super::nets::NetDenoiser;
use super::params::AdamWConfig;
use crate::diffusion::corrupt;
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adamw: AdamWConfig,
    /// Fraction of epochs after which the learning rate is multiplied by 0.1.
    pub lr_drop_after: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            adamw: AdamWConfig::default(),
            lr_drop_after: 0.8,
            seed: 0,
        }
    }
}

/// Per-step mean losses of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over a window of steps (clamped to the available range).
    pub fn window_mean(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.step_losses.len());
        let from = from.min(to);
        if from == to {
            return f64::NAN;
        }
        self.step_losses[from..to].iter().sum::<f64>() / (to - from) as f64
    }
}

/// Trains `net` on normal feature tensors with the eps-regression objective.
///
/// Each example draws its step uniformly from `[1, T]` and its noise from a
/// per-(epoch, sample) stream, so runs are reproducible for a fixed seed.
pub fn train(
    net: &mut NetDenoiser,
    data: &[Tensor],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    let t_max = sched.t_max();
    let drop_at = (cfg.lr_drop_after * cfg.epochs as f64).ceil() as usize;
    let mut report = TrainReport {
        step_losses: Vec::new(),
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, "train-shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let lr_scale = if epoch >= drop_at { 0.1 } else { 1.0 };
        let adamw = AdamWConfig {
            lr: cfg.adamw.lr * lr_scale,
            ..cfg.adamw
        };

        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut loss_sum = 0.0f64;
            for &idx in batch {
                let x0 = &data[idx];
                let mut noise_rng =
                    rng::stream(cfg.seed, "train-noise", rng::salt(&[epoch as u64, idx as u64]));
                let t = noise_rng.random_range(1..=t_max);
                let eps = Tensor::standard_normal(x0.shape(), &mut noise_rng);
                let x_t = corrupt(x0, t, &eps, sched)?;
                let (tape, loss, ids) = net.build_loss_graph(&x_t, t, &eps)?;
                loss_sum += tape.value(loss).data()[0] as f64;
                let grads = tape.backward(loss)?;
                for (name, id) in &ids {
                    if let Some(g) = grads.get(*id) {
                        let acc = grad_acc
                            .entry(name.clone())
                            .or_insert_with(|| vec![0.0; g.len()]);
                        for (a, &v) in acc.iter_mut().zip(g.data()) {
                            *a += v as f64;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: BTreeMap<String, Tensor> = grad_acc
                .into_iter()
                .map(|(name, acc)| {
                    let shape = net.params().value(&name).unwrap().shape().to_vec();
                    let data = acc.iter().map(|&v| (v * scale) as f32).collect();
                    (name, Tensor::from_parts(shape, data))
                })
                .collect();
            net.params_mut().adamw_step(&grads, &adamw)?;
            report.step_losses.push(loss_sum * scale);
        }
    }
    Ok(report)
}
