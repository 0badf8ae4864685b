//! Denoiser checkpoints: one tensor container per parameter (value and both
//! optimizer moments) plus a manifest listing names, shapes, and files.

use std::fs;
use std::path::Path;

use crate::autodiff::NetDenoiser;
use crate::error::{Error, Result};
use crate::features::{load_tensor, save_tensor};

const MANIFEST: &str = "manifest.tsv";

/// Writes `net`'s parameters and optimizer state under `dir`.
pub fn save_checkpoint(dir: impl AsRef<Path>, net: &NetDenoiser) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# laft-checkpoint 1\n");
    manifest.push_str(&format!("meta\tadam_step\t{}\n", net.params().step()));
    for (name, param) in net.params().iter() {
        let value_file = format!("{name}.laft");
        let m_file = format!("{name}.m.laft");
        let v_file = format!("{name}.v.laft");
        save_tensor(dir.join(&value_file), &param.value)?;
        save_tensor(dir.join(&m_file), &param.m)?;
        save_tensor(dir.join(&v_file), &param.v)?;
        let dims = param
            .value
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        manifest.push_str(&format!(
            "param\t{name}\t{dims}\t{value_file}\t{m_file}\t{v_file}\n"
        ));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Restores a checkpoint into a freshly built `net` (same architecture and
/// channel count as at save time).
pub fn load_checkpoint(dir: impl AsRef<Path>, net: &mut NetDenoiser) -> Result<()> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::data(format!("cannot read checkpoint manifest in {}: {e}", dir.display())))?;
    let mut restored = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "meta" => {
                if fields.len() != 3 || fields[1] != "adam_step" {
                    return Err(Error::data(format!("checkpoint line {}: bad meta record", i + 1)));
                }
                let step: u64 = fields[2]
                    .parse()
                    .map_err(|_| Error::data(format!("checkpoint line {}: bad step", i + 1)))?;
                net.params_mut().set_step(step);
            }
            "param" => {
                if fields.len() != 6 {
                    return Err(Error::data(format!(
                        "checkpoint line {}: expected 6 fields, got {}",
                        i + 1,
                        fields.len()
                    )));
                }
                let name = fields[1];
                let value = load_tensor(dir.join(fields[3]))?;
                let m = load_tensor(dir.join(fields[4]))?;
                let v = load_tensor(dir.join(fields[5]))?;
                let declared: Vec<usize> = fields[2]
                    .split(',')
                    .map(|d| {
                        d.parse::<usize>().map_err(|_| {
                            Error::data(format!("checkpoint line {}: bad dims", i + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if declared != value.shape() {
                    return Err(Error::data(format!(
                        "checkpoint {name}: manifest dims {declared:?} vs stored {:?}",
                        value.shape()
                    )));
                }
                net.params_mut().restore(name, value, m, v)?;
                restored += 1;
            }
            other => {
                return Err(Error::data(format!(
                    "checkpoint line {}: unknown record kind {other}",
                    i + 1
                )));
            }
        }
    }
    if restored != net.params().len() {
        return Err(Error::data(format!(
            "checkpoint restored {restored} of {} parameters",
            net.params().len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{DenoiserConfig, Denoiser};
    use crate::rng;
    use crate::tensor::Tensor;

    #[test]
    fn checkpoint_roundtrip_preserves_predictions_and_state() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DenoiserConfig {
            hidden: vec![12],
            time_embed_dim: 8,
            ..Default::default()
        };
        let mut net = NetDenoiser::new(cfg.clone(), 3, 20, 99).unwrap();
        net.params_mut().set_step(17);
        save_checkpoint(dir.path(), &net).unwrap();

        let mut fresh = NetDenoiser::new(cfg, 3, 20, 1234).unwrap();
        load_checkpoint(dir.path(), &mut fresh).unwrap();
        assert_eq!(fresh.params().step(), 17);
        let mut r = rng::stream(1, "ckpt", 0);
        let x = Tensor::standard_normal(&[2, 2, 3], &mut r);
        let a = net.predict_eps(&x, 10).unwrap();
        let b = fresh.predict_eps(&x, 10).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = NetDenoiser::new(
            DenoiserConfig {
                hidden: vec![12],
                time_embed_dim: 8,
                ..Default::default()
            },
            3,
            20,
            0,
        )
        .unwrap();
        save_checkpoint(dir.path(), &net).unwrap();
        let mut other = NetDenoiser::new(
            DenoiserConfig {
                hidden: vec![10],
                time_embed_dim: 8,
                ..Default::default()
            },
            3,
            20,
            0,
        )
        .unwrap();
        assert!(load_checkpoint(dir.path(), &mut other).is_err());
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = NetDenoiser::new(DenoiserConfig::default(), 2, 10, 0).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path(), &mut net),
            Err(Error::Data(_))
        ));
    }
}
