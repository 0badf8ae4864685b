//! Feature ingestion: multi-scale aggregation of hierarchical feature maps,
//! the on-disk tensor container, dataset manifests, and the synthetic
//! latent-dataset generator that stands in for a pretrained backbone.

mod dataset;
mod io;
mod manifest;

pub use dataset::{synth_latent_dataset, GeneratedSample, SynthDataConfig, SynthDataset};
pub use io::{load_tensor, read_tensor, save_tensor, write_tensor, MAGIC, VERSION};
pub use manifest::{DatasetManifest, Label, SampleRecord};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, concat_channels, Tensor};

/// One level of a hierarchical feature stack.
#[derive(Debug, Clone)]
pub struct FeatureLevel {
    pub level: usize,
    pub map: Tensor,
}

/// Multi-scale aggregation settings: which levels to fuse and the common
/// spatial size they are resized to.
#[derive(Debug, Clone)]
pub struct MsaConfig {
    /// Selected level indices (by convention the final backbone level is
    /// excluded upstream).
    pub selected_levels: Vec<usize>,
    pub target_h: usize,
    pub target_w: usize,
}

impl MsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.selected_levels.is_empty() {
            return Err(Error::config("msa.selected_levels must not be empty".to_string()));
        }
        if self.target_h == 0 || self.target_w == 0 {
            return Err(Error::config("msa target size must be positive".to_string()));
        }
        Ok(())
    }
}

/// Resizes every selected level to the target size and concatenates them
/// along channels in ascending level order.
pub fn aggregate(levels: &[FeatureLevel], cfg: &MsaConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mut wanted = cfg.selected_levels.clone();
    wanted.sort_unstable();
    wanted.dedup();
    let mut resized = Vec::with_capacity(wanted.len());
    for lvl in &wanted {
        let found = levels
            .iter()
            .find(|f| f.level == *lvl)
            .ok_or_else(|| Error::config(format!("selected level {lvl} missing from input")))?;
        resized.push(bilinear_resize(&found.map, cfg.target_h, cfg.target_w)?);
    }
    let refs: Vec<&Tensor> = resized.iter().collect();
    concat_channels(&refs)
}
