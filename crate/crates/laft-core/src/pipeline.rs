//! End-to-end wiring: (optional) feature editing, diffusion reconstruction,
//! scoring, metric reports, and the two-stage hyperparameter sweep.
//!
//! Every sample owns an RNG stream keyed by `(seed, run salt, sample index)`,
//! so parallel and serial schedules produce bit-identical results.

use crate::autodiff::Denoiser;
use crate::config::PipelineConfig;
use crate::diffusion::{reconstruct, ReconstructConfig, X0Denominator};
use crate::error::{Error, Result};
use crate::features::{GeneratedSample, Label};
use crate::membank::{edit_tensor, CoreSet, EditConfig, WeightMode};
use crate::metrics::{aupr, aupro, auroc, ScoredSet};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::scoring::{image_score, score_map, ScoreMap};
use crate::synth::PseudoSample;
use crate::tensor::Tensor;
use crate::tune::SweepPoint;

/// One sample ready for evaluation.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub index: u64,
    pub x0: Tensor,
    pub anomalous: bool,
    pub mask: Option<Tensor>,
}

pub fn samples_from_generated(gen: &[GeneratedSample]) -> Vec<EvalSample> {
    gen.iter()
        .enumerate()
        .map(|(i, s)| EvalSample {
            id: s.id.clone(),
            index: i as u64,
            x0: s.tensor.clone(),
            anomalous: s.label == Label::Anomalous,
            mask: s.mask.clone(),
        })
        .collect()
}

pub fn samples_from_pseudo(ps: &[PseudoSample]) -> Vec<EvalSample> {
    ps.iter()
        .enumerate()
        .map(|(i, s)| EvalSample {
            id: s.id.clone(),
            index: i as u64,
            x0: s.tensor.clone(),
            anomalous: s.label == Label::Anomalous,
            mask: s.gt_mask.clone(),
        })
        .collect()
}

/// Inference-time knobs shared across subcommands.
#[derive(Debug, Clone)]
pub struct PipelineSettings {
    pub tau: usize,
    /// 0 selects ceil(tau / 20).
    pub stride: usize,
    pub x0_denominator: X0Denominator,
    pub edit: EditConfig,
    pub sigma: f64,
    pub pool_window: usize,
    /// 0 keeps the feature resolution.
    pub map_height: usize,
    pub map_width: usize,
    pub fpr_limit: f64,
    pub seed: u64,
    pub threads: usize,
}

impl PipelineSettings {
    pub fn from_config(cfg: &PipelineConfig, seed: u64, threads: usize) -> Self {
        Self {
            tau: cfg.reconstruct.tau,
            stride: cfg.reconstruct.stride,
            x0_denominator: cfg.reconstruct.x0_denominator,
            edit: EditConfig {
                k: cfg.membank.neighbors,
                weight_mode: cfg.membank.weight_mode,
            },
            sigma: cfg.scoring.sigma,
            pool_window: cfg.scoring.pool_window,
            map_height: cfg.scoring.map_height,
            map_width: cfg.scoring.map_width,
            fpr_limit: cfg.metrics.fpr_limit,
            seed,
            threads: threads.max(1),
        }
    }

    fn effective_stride(&self, tau: usize) -> usize {
        if self.stride == 0 {
            tau.div_ceil(20)
        } else {
            self.stride.min(tau)
        }
    }
}

/// Detection and localization metrics of one evaluation run.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub det_auroc: f64,
    pub det_aupr: f64,
    pub loc_auroc: Option<f64>,
    pub loc_aupro: Option<f64>,
}

/// Per-sample outputs of one evaluation run, in input order.
pub struct Evaluated {
    pub maps: Vec<ScoreMap>,
    pub image_scores: Vec<f64>,
}

/// Borrowed pipeline state: schedule, denoiser, and (optionally) a core set
/// for feature editing.
pub struct Pipeline<'a> {
    pub sched: &'a NoiseSchedule,
    pub denoiser: &'a dyn Denoiser,
    pub coreset: Option<&'a CoreSet>,
    pub settings: PipelineSettings,
}

/// Deterministic parallel map: results are placed by index, so the thread
/// count never changes the output.
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..threads)
            .map(|stripe| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut i = stripe;
                    while i < items.len() {
                        out.push((i, f(i, &items[i])));
                        i += threads;
                    }
                    out
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("pipeline worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

impl Pipeline<'_> {
    fn edit_input(&self, x0: &Tensor, edit: Option<EditConfig>) -> Result<Tensor> {
        match edit {
            None => Ok(x0.clone()),
            Some(cfg) => {
                let coreset = self.coreset.ok_or_else(|| {
                    Error::config("feature editing requested without a core set".to_string())
                })?;
                edit_tensor(x0, coreset, &cfg)
            }
        }
    }

    /// Reconstructs one tensor; `run_salt` isolates the RNG stream of this
    /// run (e.g. a grid point), `index` the sample within it.
    pub fn reconstruct_sample(
        &self,
        x0: &Tensor,
        tau: usize,
        edit: Option<EditConfig>,
        run_salt: u64,
        index: u64,
    ) -> Result<Tensor> {
        let x_init = self.edit_input(x0, edit)?;
        let cfg = ReconstructConfig {
            tau,
            dt: self.settings.effective_stride(tau),
            x0_denominator: self.settings.x0_denominator,
        };
        let mut rng = rng::stream(self.settings.seed, "recon", rng::salt(&[run_salt, index]));
        reconstruct(&x_init, &cfg, self.denoiser, self.sched, &mut rng)
    }

    fn map_dims(&self, x0: &Tensor) -> (usize, usize) {
        let h = if self.settings.map_height == 0 {
            x0.shape()[0]
        } else {
            self.settings.map_height
        };
        let w = if self.settings.map_width == 0 {
            x0.shape()[1]
        } else {
            self.settings.map_width
        };
        (h, w)
    }

    /// Score map and image-level score for one sample.
    pub fn score_sample(
        &self,
        sample: &EvalSample,
        tau: usize,
        edit: Option<EditConfig>,
        run_salt: u64,
    ) -> Result<(ScoreMap, f64)> {
        let rec = self.reconstruct_sample(&sample.x0, tau, edit, run_salt, sample.index)?;
        let (out_h, out_w) = self.map_dims(&sample.x0);
        let map = score_map(&sample.x0, &rec, out_h, out_w, self.settings.sigma)?;
        let score = image_score(&map, self.settings.pool_window.min(out_h).min(out_w))?;
        Ok((map, score))
    }

    /// Runs the pipeline over all samples (parallel over samples).
    pub fn evaluate(
        &self,
        samples: &[EvalSample],
        tau: usize,
        edit: Option<EditConfig>,
        run_salt: u64,
    ) -> Result<Evaluated> {
        let results = parallel_map(samples, self.settings.threads, |_, s| {
            self.score_sample(s, tau, edit, run_salt)
        });
        let mut maps = Vec::with_capacity(samples.len());
        let mut image_scores = Vec::with_capacity(samples.len());
        for r in results {
            let (m, s) = r?;
            maps.push(m);
            image_scores.push(s);
        }
        Ok(Evaluated { maps, image_scores })
    }

    pub fn detection_scores(&self, samples: &[EvalSample], evaluated: &Evaluated) -> ScoredSet {
        let mut set = ScoredSet::default();
        for (s, &score) in samples.iter().zip(&evaluated.image_scores) {
            set.push(score, s.anomalous);
        }
        set
    }

    /// Detection AUROC at a given tau (used by the sweeps).
    pub fn detection_auroc(
        &self,
        samples: &[EvalSample],
        tau: usize,
        edit: Option<EditConfig>,
        run_salt: u64,
    ) -> Result<f64> {
        let evaluated = self.evaluate(samples, tau, edit, run_salt)?;
        auroc(&self.detection_scores(samples, &evaluated))
    }

    /// Full metric report; localization metrics are present when any sample
    /// carries a ground-truth mask.
    pub fn report(
        &self,
        samples: &[EvalSample],
        tau: usize,
        edit: Option<EditConfig>,
        run_salt: u64,
    ) -> Result<EvalReport> {
        let evaluated = self.evaluate(samples, tau, edit, run_salt)?;
        let set = self.detection_scores(samples, &evaluated);
        let det_auroc = auroc(&set)?;
        let det_aupr = aupr(&set)?;

        let any_mask = samples.iter().any(|s| s.mask.is_some());
        let (loc_auroc, loc_aupro) = if any_mask {
            for s in samples {
                if s.anomalous && s.mask.is_none() {
                    return Err(Error::data(format!(
                        "anomalous sample {} has no mask for localization metrics",
                        s.id
                    )));
                }
            }
            let mut pixel_set = ScoredSet::default();
            let mut pro_inputs: Vec<(&Tensor, Option<&Tensor>)> = Vec::new();
            for (s, m) in samples.iter().zip(&evaluated.maps) {
                let map = m.map();
                if let Some(mask) = &s.mask {
                    if mask.shape() != map.shape() {
                        return Err(Error::shape(format!(
                            "mask {:?} vs score map {:?} for {}",
                            mask.shape(),
                            map.shape(),
                            s.id
                        )));
                    }
                    for (p, &v) in map.data().iter().enumerate() {
                        pixel_set.push(v as f64, mask.data()[p] > 0.5);
                    }
                    pro_inputs.push((map, Some(mask)));
                } else {
                    for &v in map.data() {
                        pixel_set.push(v as f64, false);
                    }
                    pro_inputs.push((map, None));
                }
            }
            (Some(auroc(&pixel_set)?), Some(aupro(&pro_inputs, self.settings.fpr_limit)?))
        } else {
            (None, None)
        };

        Ok(EvalReport {
            det_auroc,
            det_aupr,
            loc_auroc,
            loc_aupro,
        })
    }

    /// Stage 1: pick tau by detection AUROC with feature editing disabled.
    pub fn select_tau(
        &self,
        grid: &[usize],
        pseudo: &[EvalSample],
    ) -> Result<(usize, Vec<SweepPoint>)> {
        crate::tune::sweep(grid, |tau| {
            self.detection_auroc(pseudo, tau, None, rng::salt(&[1, tau as u64, 0]))
        })
    }

    /// Stage 2: fix tau and pick K with feature editing enabled.
    pub fn select_k(
        &self,
        grid: &[usize],
        tau: usize,
        pseudo: &[EvalSample],
    ) -> Result<(usize, Vec<SweepPoint>)> {
        let mode = self.settings.edit.weight_mode;
        crate::tune::sweep(grid, |k| {
            let edit = EditConfig {
                k,
                weight_mode: mode,
            };
            self.detection_auroc(pseudo, tau, Some(edit), rng::salt(&[2, tau as u64, k as u64]))
        })
    }
}

/// Convenience for tests and the CLI: default edit config from settings.
pub fn edit_from_settings(s: &PipelineSettings) -> EditConfig {
    EditConfig {
        k: s.edit.k,
        weight_mode: s.edit.weight_mode,
    }
}

/// Weight-mode re-export shortcut for callers assembling settings by hand.
pub fn default_edit(k: usize) -> EditConfig {
    EditConfig {
        k,
        weight_mode: WeightMode::Normalized,
    }
}
