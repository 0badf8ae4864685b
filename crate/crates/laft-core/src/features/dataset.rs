//! Synthetic multi-class latent dataset: per-class Gaussian feature slices
//! with rectangular offset anomalies and exact ground-truth masks.

use rand::Rng;

use super::manifest::Label;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SynthDataConfig {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Fraction of test samples per class that carry an anomaly.
    pub anomaly_fraction: f64,
    /// Offset magnitude in units of the per-channel standard deviation.
    pub anomaly_offset_sigmas: f64,
    /// Spread of the per-class mean vectors.
    pub class_mean_scale: f64,
    /// Within-class per-channel standard deviation.
    pub sample_std: f64,
}

impl Default for SynthDataConfig {
    fn default() -> Self {
        Self {
            n_classes: 3,
            train_per_class: 100,
            test_per_class: 60,
            height: 8,
            width: 8,
            channels: 8,
            anomaly_fraction: 0.5,
            anomaly_offset_sigmas: 5.0,
            class_mean_scale: 4.0,
            sample_std: 1.0,
        }
    }
}

impl SynthDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0
            || self.train_per_class == 0
            || self.test_per_class == 0
            || self.height == 0
            || self.width == 0
            || self.channels == 0
        {
            return Err(Error::invalid("all dataset counts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return Err(Error::invalid(format!(
                "anomaly fraction {} outside [0, 1]",
                self.anomaly_fraction
            )));
        }
        if !(self.sample_std > 0.0) {
            return Err(Error::invalid(format!(
                "sample std {} must be positive",
                self.sample_std
            )));
        }
        Ok(())
    }
}

/// One generated sample, in memory.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub id: String,
    pub class_id: usize,
    pub label: Label,
    pub tensor: Tensor,
    /// Binary `[h, w]` ground-truth mask, present iff anomalous.
    pub mask: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<GeneratedSample>,
    pub test: Vec<GeneratedSample>,
    pub class_means: Vec<Vec<f32>>,
}

fn class_means(cfg: &SynthDataConfig, seed: u64) -> Vec<Vec<f32>> {
    (0..cfg.n_classes)
        .map(|k| {
            let mut r = rng::stream(seed, "class-means", k as u64);
            (0..cfg.channels)
                .map(|_| {
                    let z: f64 = r.sample(rand_distr::StandardNormal);
                    (z * cfg.class_mean_scale) as f32
                })
                .collect()
        })
        .collect()
}

fn normal_tensor(cfg: &SynthDataConfig, mean: &[f32], rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::standard_normal(&[cfg.height, cfg.width, cfg.channels], rng);
    let std = cfg.sample_std as f32;
    for pos in 0..cfg.height * cfg.width {
        for ch in 0..cfg.channels {
            let v = &mut t.data_mut()[pos * cfg.channels + ch];
            *v = *v * std + mean[ch];
        }
    }
    t
}

/// Adds a rectangular per-channel offset and returns the mask.
fn inject_anomaly(t: &mut Tensor, magnitude: f64, rng: &mut impl Rng) -> Tensor {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let rh = rng.random_range((h / 4).max(1)..=(h / 2).max(1));
    let rw = rng.random_range((w / 4).max(1)..=(w / 2).max(1));
    let top = rng.random_range(0..=h - rh);
    let left = rng.random_range(0..=w - rw);
    let signs: Vec<f32> = (0..c)
        .map(|_| if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 })
        .collect();
    let mut mask = Tensor::zeros(&[h, w]);
    for i in top..top + rh {
        for j in left..left + rw {
            mask.data_mut()[i * w + j] = 1.0;
            for ch in 0..c {
                t.data_mut()[(i * w + j) * c + ch] += signs[ch] * magnitude as f32;
            }
        }
    }
    mask
}

/// Generates the train/test sets deterministically from `seed`.
pub fn synth_latent_dataset(cfg: &SynthDataConfig, seed: u64) -> Result<SynthDataset> {
    cfg.validate()?;
    let means = class_means(cfg, seed);
    let mut train = Vec::with_capacity(cfg.n_classes * cfg.train_per_class);
    let mut test = Vec::with_capacity(cfg.n_classes * cfg.test_per_class);
    let n_anom = (cfg.test_per_class as f64 * cfg.anomaly_fraction).round() as usize;

    for k in 0..cfg.n_classes {
        for i in 0..cfg.train_per_class {
            let mut r = rng::stream(seed, "synth-train", rng::salt(&[k as u64, i as u64]));
            train.push(GeneratedSample {
                id: format!("train_c{k}_{i:04}"),
                class_id: k,
                label: Label::Normal,
                tensor: normal_tensor(cfg, &means[k], &mut r),
                mask: None,
            });
        }
        for i in 0..cfg.test_per_class {
            let mut r = rng::stream(seed, "synth-test", rng::salt(&[k as u64, i as u64]));
            let mut tensor = normal_tensor(cfg, &means[k], &mut r);
            let anomalous = i < n_anom;
            let mask = if anomalous {
                Some(inject_anomaly(
                    &mut tensor,
                    cfg.anomaly_offset_sigmas * cfg.sample_std,
                    &mut r,
                ))
            } else {
                None
            };
            test.push(GeneratedSample {
                id: format!("test_c{k}_{i:04}"),
                class_id: k,
                label: if anomalous { Label::Anomalous } else { Label::Normal },
                tensor,
                mask,
            });
        }
    }
    Ok(SynthDataset {
        train,
        test,
        class_means: means,
    })
}
