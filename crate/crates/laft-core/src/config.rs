//! Pipeline configuration: `key = value` lines under `[section]` headers.
//!
//! Unknown keys are errors (naming the field), defaults follow the reference
//! setup (T = 1000, keep rate 0.10, sigma = 4, AdamW 1e-4/1e-4), and the
//! effective config serializes back to the same format so runs can echo and
//! reload it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::{Architecture, DenoiserConfig};
use crate::diffusion::X0Denominator;
use crate::error::{Error, Result};
use crate::features::SynthDataConfig;
use crate::membank::WeightMode;
use crate::synth::{MaskKind, MaskSpec};
use crate::tune::TuneGrid;

/// Training-loop settings (the optimizer constants live here too).
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_drop_after: f64,
}

#[derive(Debug, Clone)]
pub struct ScheduleSettings {
    pub steps: usize,
    pub eta: f64,
    /// Only the cosine schedule is implemented; the key is a hook.
    pub kind: String,
}

#[derive(Debug, Clone)]
pub struct MembankSettings {
    pub keep_rate: f64,
    pub neighbors: usize,
    pub weight_mode: WeightMode,
    pub coreset_seed_index: usize,
}

#[derive(Debug, Clone)]
pub struct ReconstructSettings {
    pub tau: usize,
    /// Sampling stride; 0 selects ceil(tau / 20).
    pub stride: usize,
    pub x0_denominator: X0Denominator,
}

impl ReconstructSettings {
    /// The stride actually used for a given tau.
    pub fn effective_stride(&self, tau: usize) -> usize {
        if self.stride == 0 {
            tau.div_ceil(20)
        } else {
            self.stride.min(tau)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoringSettings {
    pub sigma: f64,
    pub pool_window: usize,
    /// Output map size; 0 keeps the feature resolution.
    pub map_height: usize,
    pub map_width: usize,
}

#[derive(Debug, Clone)]
pub struct SynthSettings {
    pub mask: MaskSpec,
    pub batch_size: usize,
    pub normal_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsSettings {
    pub fpr_limit: f64,
}

/// Every tunable of the pipeline, grouped by section.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub data: SynthDataConfig,
    pub schedule: ScheduleSettings,
    pub denoiser: DenoiserConfig,
    pub train: TrainSettings,
    pub membank: MembankSettings,
    pub reconstruct: ReconstructSettings,
    pub scoring: ScoringSettings,
    pub synth: SynthSettings,
    pub metrics: MetricsSettings,
    pub tune: TuneGrid,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: SynthDataConfig::default(),
            schedule: ScheduleSettings {
                steps: 1000,
                eta: 0.0,
                kind: "cosine".to_string(),
            },
            denoiser: DenoiserConfig::default(),
            train: TrainSettings {
                epochs: 50,
                batch_size: 16,
                learning_rate: 1e-4,
                weight_decay: 1e-4,
                lr_drop_after: 0.8,
            },
            membank: MembankSettings {
                keep_rate: 0.10,
                neighbors: 3,
                weight_mode: WeightMode::Normalized,
                coreset_seed_index: 0,
            },
            reconstruct: ReconstructSettings {
                tau: 970,
                stride: 0,
                x0_denominator: X0Denominator::Sqrt,
            },
            scoring: ScoringSettings {
                sigma: 4.0,
                pool_window: 8,
                map_height: 0,
                map_width: 0,
            },
            synth: SynthSettings {
                mask: MaskSpec::default(),
                batch_size: 16,
                normal_fraction: 0.5,
            },
            metrics: MetricsSettings { fpr_limit: 0.3 },
            tune: TuneGrid {
                tau_values: vec![250, 500, 750, 970],
                k_values: vec![1, 3, 5],
            },
        }
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{section}.{key}: cannot parse \"{v}\"")))
}

fn parse_list(section: &str, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| parse_num(section, key, p.trim()))
        .collect()
}

fn fmt_list(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl PipelineConfig {
    /// Parses config text over the defaults; unknown fields are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut entries: BTreeMap<(String, String), String> = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected key = value, got \"{line}\"",
                    i + 1
                )));
            };
            if section.is_empty() {
                return Err(Error::config(format!(
                    "line {}: key outside any [section]",
                    i + 1
                )));
            }
            entries.insert(
                (section.clone(), key.trim().to_string()),
                value.trim().to_string(),
            );
        }

        let mut take = |section: &str, key: &str| -> Option<String> {
            entries.remove(&(section.to_string(), key.to_string()))
        };

        macro_rules! num {
            ($sect:literal, $key:literal, $slot:expr) => {
                if let Some(v) = take($sect, $key) {
                    $slot = parse_num($sect, $key, &v)?;
                }
            };
        }

        num!("data", "classes", cfg.data.n_classes);
        num!("data", "train_per_class", cfg.data.train_per_class);
        num!("data", "test_per_class", cfg.data.test_per_class);
        num!("data", "height", cfg.data.height);
        num!("data", "width", cfg.data.width);
        num!("data", "channels", cfg.data.channels);
        num!("data", "anomaly_fraction", cfg.data.anomaly_fraction);
        num!("data", "anomaly_offset_sigmas", cfg.data.anomaly_offset_sigmas);
        num!("data", "class_mean_scale", cfg.data.class_mean_scale);
        num!("data", "sample_std", cfg.data.sample_std);

        num!("schedule", "steps", cfg.schedule.steps);
        num!("schedule", "eta", cfg.schedule.eta);
        if let Some(v) = take("schedule", "kind") {
            cfg.schedule.kind = v;
        }

        if let Some(v) = take("denoiser", "arch") {
            cfg.denoiser.arch = Architecture::parse(&v)?;
        }
        if let Some(v) = take("denoiser", "hidden") {
            cfg.denoiser.hidden = parse_list("denoiser", "hidden", &v)?;
        }
        num!("denoiser", "base_channels", cfg.denoiser.base_channels);
        if let Some(v) = take("denoiser", "channel_mults") {
            let list = parse_list("denoiser", "channel_mults", &v)?;
            if list.len() != 3 {
                return Err(Error::config(
                    "denoiser.channel_mults needs exactly 3 entries".to_string(),
                ));
            }
            cfg.denoiser.channel_mults = [list[0], list[1], list[2]];
        }
        num!("denoiser", "time_embed_dim", cfg.denoiser.time_embed_dim);

        num!("train", "epochs", cfg.train.epochs);
        num!("train", "batch_size", cfg.train.batch_size);
        num!("train", "learning_rate", cfg.train.learning_rate);
        num!("train", "weight_decay", cfg.train.weight_decay);
        num!("train", "lr_drop_after", cfg.train.lr_drop_after);

        num!("membank", "keep_rate", cfg.membank.keep_rate);
        num!("membank", "neighbors", cfg.membank.neighbors);
        if let Some(v) = take("membank", "weight_mode") {
            cfg.membank.weight_mode = WeightMode::parse(&v)?;
        }
        num!("membank", "coreset_seed_index", cfg.membank.coreset_seed_index);

        num!("reconstruct", "tau", cfg.reconstruct.tau);
        num!("reconstruct", "stride", cfg.reconstruct.stride);
        if let Some(v) = take("reconstruct", "x0_denominator") {
            cfg.reconstruct.x0_denominator = X0Denominator::parse(&v)?;
        }

        num!("scoring", "sigma", cfg.scoring.sigma);
        num!("scoring", "pool_window", cfg.scoring.pool_window);
        num!("scoring", "map_height", cfg.scoring.map_height);
        num!("scoring", "map_width", cfg.scoring.map_width);

        if let Some(v) = take("synth", "mask_kind") {
            cfg.synth.mask.kind = MaskKind::parse(&v)?;
        }
        num!("synth", "area_min", cfg.synth.mask.area_min);
        num!("synth", "area_max", cfg.synth.mask.area_max);
        num!("synth", "rotation_min", cfg.synth.mask.rotation_min);
        num!("synth", "rotation_max", cfg.synth.mask.rotation_max);
        num!("synth", "count_min", cfg.synth.mask.count_min);
        num!("synth", "count_max", cfg.synth.mask.count_max);
        num!("synth", "batch_size", cfg.synth.batch_size);
        num!("synth", "normal_fraction", cfg.synth.normal_fraction);

        num!("metrics", "fpr_limit", cfg.metrics.fpr_limit);

        if let Some(v) = take("tune", "tau_grid") {
            cfg.tune.tau_values = parse_list("tune", "tau_grid", &v)?;
        }
        if let Some(v) = take("tune", "k_grid") {
            cfg.tune.k_values = parse_list("tune", "k_grid", &v)?;
        }

        if let Some(((section, key), _)) = entries.into_iter().next() {
            return Err(Error::config(format!("unknown field {section}.{key}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serializes the effective configuration (parseable by [`Self::parse`]).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "[data]\n\
             classes = {}\n\
             train_per_class = {}\n\
             test_per_class = {}\n\
             height = {}\n\
             width = {}\n\
             channels = {}\n\
             anomaly_fraction = {}\n\
             anomaly_offset_sigmas = {}\n\
             class_mean_scale = {}\n\
             sample_std = {}\n\n",
            self.data.n_classes,
            self.data.train_per_class,
            self.data.test_per_class,
            self.data.height,
            self.data.width,
            self.data.channels,
            self.data.anomaly_fraction,
            self.data.anomaly_offset_sigmas,
            self.data.class_mean_scale,
            self.data.sample_std,
        );
        let _ = write!(
            s,
            "[schedule]\nsteps = {}\neta = {}\nkind = {}\n\n",
            self.schedule.steps, self.schedule.eta, self.schedule.kind
        );
        let _ = write!(
            s,
            "[denoiser]\narch = {}\nhidden = {}\nbase_channels = {}\nchannel_mults = {}\ntime_embed_dim = {}\n\n",
            self.denoiser.arch.name(),
            fmt_list(&self.denoiser.hidden),
            self.denoiser.base_channels,
            fmt_list(&self.denoiser.channel_mults),
            self.denoiser.time_embed_dim,
        );
        let _ = write!(
            s,
            "[train]\nepochs = {}\nbatch_size = {}\nlearning_rate = {}\nweight_decay = {}\nlr_drop_after = {}\n\n",
            self.train.epochs,
            self.train.batch_size,
            self.train.learning_rate,
            self.train.weight_decay,
            self.train.lr_drop_after,
        );
        let _ = write!(
            s,
            "[membank]\nkeep_rate = {}\nneighbors = {}\nweight_mode = {}\ncoreset_seed_index = {}\n\n",
            self.membank.keep_rate,
            self.membank.neighbors,
            self.membank.weight_mode.name(),
            self.membank.coreset_seed_index,
        );
        let _ = write!(
            s,
            "[reconstruct]\ntau = {}\nstride = {}\nx0_denominator = {}\n\n",
            self.reconstruct.tau,
            self.reconstruct.stride,
            self.reconstruct.x0_denominator.name(),
        );
        let _ = write!(
            s,
            "[scoring]\nsigma = {}\npool_window = {}\nmap_height = {}\nmap_width = {}\n\n",
            self.scoring.sigma,
            self.scoring.pool_window,
            self.scoring.map_height,
            self.scoring.map_width,
        );
        let _ = write!(
            s,
            "[synth]\nmask_kind = {}\narea_min = {}\narea_max = {}\nrotation_min = {}\nrotation_max = {}\ncount_min = {}\ncount_max = {}\nbatch_size = {}\nnormal_fraction = {}\n\n",
            self.synth.mask.kind.name(),
            self.synth.mask.area_min,
            self.synth.mask.area_max,
            self.synth.mask.rotation_min,
            self.synth.mask.rotation_max,
            self.synth.mask.count_min,
            self.synth.mask.count_max,
            self.synth.batch_size,
            self.synth.normal_fraction,
        );
        let _ = write!(s, "[metrics]\nfpr_limit = {}\n\n", self.metrics.fpr_limit);
        let _ = write!(
            s,
            "[tune]\ntau_grid = {}\nk_grid = {}\n",
            fmt_list(&self.tune.tau_values),
            fmt_list(&self.tune.k_values),
        );
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_text())?;
        Ok(())
    }

    /// Cross-field validity checks; error messages name the field.
    pub fn validate(&self) -> Result<()> {
        self.data
            .validate()
            .map_err(|e| Error::config(format!("data: {e}")))?;
        if self.schedule.steps == 0 {
            return Err(Error::config("schedule.steps must be positive".to_string()));
        }
        if self.schedule.eta < 0.0 {
            return Err(Error::config("schedule.eta must be nonnegative".to_string()));
        }
        if self.schedule.kind != "cosine" {
            return Err(Error::config(format!(
                "schedule.kind: only \"cosine\" is implemented, got \"{}\"",
                self.schedule.kind
            )));
        }
        self.denoiser.validate()?;
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::config(
                "train.epochs and train.batch_size must be positive".to_string(),
            ));
        }
        if !(self.train.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate must be positive".to_string()));
        }
        if self.train.weight_decay < 0.0 {
            return Err(Error::config("train.weight_decay must be nonnegative".to_string()));
        }
        if !(0.0..=1.0).contains(&self.train.lr_drop_after) {
            return Err(Error::config("train.lr_drop_after must be in [0, 1]".to_string()));
        }
        if !(self.membank.keep_rate > 0.0 && self.membank.keep_rate <= 1.0) {
            return Err(Error::config(format!(
                "membank.keep_rate {} outside (0, 1]",
                self.membank.keep_rate
            )));
        }
        if self.membank.neighbors == 0 {
            return Err(Error::config("membank.neighbors must be positive".to_string()));
        }
        if self.reconstruct.tau == 0 || self.reconstruct.tau > self.schedule.steps {
            return Err(Error::config(format!(
                "reconstruct.tau {} outside [1, schedule.steps = {}]",
                self.reconstruct.tau, self.schedule.steps
            )));
        }
        if self.reconstruct.stride > self.reconstruct.tau {
            return Err(Error::config(format!(
                "reconstruct.stride {} exceeds tau {}",
                self.reconstruct.stride, self.reconstruct.tau
            )));
        }
        if !(self.scoring.sigma > 0.0) {
            return Err(Error::config("scoring.sigma must be positive".to_string()));
        }
        if self.scoring.pool_window == 0 {
            return Err(Error::config("scoring.pool_window must be positive".to_string()));
        }
        self.synth.mask.validate()?;
        if self.synth.batch_size < 2 {
            return Err(Error::config("synth.batch_size must be at least 2".to_string()));
        }
        if !(0.0..1.0).contains(&self.synth.normal_fraction) {
            return Err(Error::config(format!(
                "synth.normal_fraction {} outside [0, 1)",
                self.synth.normal_fraction
            )));
        }
        if !(self.metrics.fpr_limit > 0.0 && self.metrics.fpr_limit <= 1.0) {
            return Err(Error::config(format!(
                "metrics.fpr_limit {} outside (0, 1]",
                self.metrics.fpr_limit
            )));
        }
        self.tune.validate(self.schedule.steps)?;
        Ok(())
    }
}
