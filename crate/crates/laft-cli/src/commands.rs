//! Implementations of the subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use laft_core::autodiff::{self, NetDenoiser, TrainConfig};
use laft_core::checkpoint::{load_checkpoint, save_checkpoint};
use laft_core::config::PipelineConfig;
use laft_core::features::{
    load_tensor, save_tensor, synth_latent_dataset, DatasetManifest, Label, SampleRecord,
};
use laft_core::membank::{build_bank, greedy_coreset, CoreSet, EditConfig};
use laft_core::pipeline::{samples_from_pseudo, EvalSample, Pipeline, PipelineSettings};
use laft_core::schedule::NoiseSchedule;
use laft_core::scoring::write_pgm;
use laft_core::synth::build_pseudo_validation;
use laft_core::{Error, Result, Tensor};

pub struct Context {
    pub cfg: PipelineConfig,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

impl Context {
    fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::cosine(self.cfg.schedule.steps, self.cfg.schedule.eta)
    }

    fn settings(&self) -> PipelineSettings {
        PipelineSettings::from_config(&self.cfg, self.seed, self.threads)
    }

    fn edit(&self) -> EditConfig {
        EditConfig {
            k: self.cfg.membank.neighbors,
            weight_mode: self.cfg.membank.weight_mode,
        }
    }
}

/// Loads every record of a manifest into memory.
fn load_samples(manifest_path: &Path) -> Result<(DatasetManifest, Vec<EvalSample>)> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let mut samples = Vec::with_capacity(manifest.records.len());
    for (i, rec) in manifest.records.iter().enumerate() {
        let tensor = load_tensor(manifest.resolve(&rec.tensor_path))?;
        let mask = match &rec.mask_path {
            Some(p) => Some(load_tensor(manifest.resolve(p))?),
            None => None,
        };
        samples.push(EvalSample {
            id: rec.id.clone(),
            index: i as u64,
            x0: tensor,
            anomalous: rec.label == Label::Anomalous,
            mask,
        });
    }
    Ok((manifest, samples))
}

fn channels_of(samples: &[EvalSample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::data("manifest is empty"))?;
    Ok(first.x0.shape()[2])
}

fn load_denoiser(ctx: &Context, checkpoint: &Path, channels: usize) -> Result<NetDenoiser> {
    let mut net = NetDenoiser::new(
        ctx.cfg.denoiser.clone(),
        channels,
        ctx.cfg.schedule.steps,
        ctx.seed,
    )?;
    load_checkpoint(checkpoint, &mut net)?;
    Ok(net)
}

fn load_coreset(path: &Path) -> Result<CoreSet> {
    let rows = load_tensor(path)?;
    let &[n, d] = rows.shape() else {
        return Err(Error::data(format!(
            "core set tensor must be [n,d], got {:?}",
            rows.shape()
        )));
    };
    let idx_path = path.with_extension("indices.txt");
    let text = fs::read_to_string(&idx_path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", idx_path.display())))?;
    let indices: Vec<usize> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::data(format!("bad core-set index line: {l}")))
        })
        .collect::<Result<_>>()?;
    if indices.len() != n {
        return Err(Error::data(format!(
            "core set has {n} rows but {} indices",
            indices.len()
        )));
    }
    CoreSet::from_parts(d, indices, rows.into_data())
}

pub fn datagen(ctx: &Context) -> Result<()> {
    let ds = synth_latent_dataset(&ctx.cfg.data, ctx.seed)?;
    let tensors_dir = ctx.out.join("tensors");
    let masks_dir = ctx.out.join("masks");
    fs::create_dir_all(&tensors_dir)?;
    fs::create_dir_all(&masks_dir)?;

    let write_split = |name: &str, samples: &[laft_core::features::GeneratedSample]| -> Result<()> {
        let mut records = Vec::with_capacity(samples.len());
        for s in samples {
            let tensor_rel = PathBuf::from(format!("tensors/{}.laft", s.id));
            save_tensor(ctx.out.join(&tensor_rel), &s.tensor)?;
            let mask_rel = match &s.mask {
                Some(m) => {
                    let rel = PathBuf::from(format!("masks/{}.laft", s.id));
                    save_tensor(ctx.out.join(&rel), m)?;
                    Some(rel)
                }
                None => None,
            };
            records.push(SampleRecord {
                id: s.id.clone(),
                label: s.label,
                tensor_path: tensor_rel,
                class_id: s.class_id,
                mask_path: mask_rel,
            });
        }
        DatasetManifest::new(records, &ctx.out).save(ctx.out.join(name))
    };
    write_split("train.tsv", &ds.train)?;
    write_split("test.tsv", &ds.test)?;
    Ok(())
}

pub fn train(ctx: &Context, args: &crate::TrainArgs) -> Result<()> {
    let (manifest, samples) = load_samples(&args.train_manifest)?;
    manifest.validate_training()?;
    let channels = channels_of(&samples)?;
    let sched = ctx.schedule()?;
    let mut net = NetDenoiser::new(
        ctx.cfg.denoiser.clone(),
        channels,
        ctx.cfg.schedule.steps,
        ctx.seed,
    )?;
    let data: Vec<Tensor> = samples.into_iter().map(|s| s.x0).collect();
    let tcfg = TrainConfig {
        epochs: ctx.cfg.train.epochs,
        batch_size: ctx.cfg.train.batch_size,
        adamw: autodiff::AdamWConfig {
            lr: ctx.cfg.train.learning_rate,
            weight_decay: ctx.cfg.train.weight_decay,
            ..Default::default()
        },
        lr_drop_after: ctx.cfg.train.lr_drop_after,
        seed: ctx.seed,
    };
    let report = autodiff::train(&mut net, &data, &sched, &tcfg)?;
    save_checkpoint(ctx.out.join("checkpoint"), &net)?;

    let mut log = String::from("# step\tloss\n");
    for (i, loss) in report.step_losses.iter().enumerate() {
        let _ = writeln!(log, "{}\t{loss:.6}", i + 1);
    }
    fs::write(ctx.out.join("train_log.tsv"), log)?;
    Ok(())
}

pub fn bank(ctx: &Context, args: &crate::TrainArgs) -> Result<()> {
    let (manifest, samples) = load_samples(&args.train_manifest)?;
    manifest.validate_training()?;
    let tensors: Vec<Tensor> = samples.into_iter().map(|s| s.x0).collect();
    let bank = build_bank(&tensors)?;
    let coreset = greedy_coreset(
        &bank,
        ctx.cfg.membank.keep_rate,
        ctx.cfg.membank.coreset_seed_index,
    )?;
    save_tensor(ctx.out.join("coreset.laft"), &coreset.rows_tensor())?;
    let mut idx = String::new();
    for i in coreset.indices() {
        let _ = writeln!(idx, "{i}");
    }
    fs::write(ctx.out.join("coreset.indices.txt"), idx)?;
    Ok(())
}

fn pseudo_validation_samples(ctx: &Context, manifest_path: &Path) -> Result<Vec<EvalSample>> {
    let (manifest, samples) = load_samples(manifest_path)?;
    manifest.validate_training()?;
    let pairs: Vec<(String, Tensor)> = samples
        .into_iter()
        .map(|s| (s.id, s.x0))
        .collect();
    let pseudo = build_pseudo_validation(
        &pairs,
        &ctx.cfg.synth.mask,
        ctx.cfg.synth.batch_size,
        ctx.cfg.synth.normal_fraction,
        ctx.seed,
    )?;
    Ok(samples_from_pseudo(&pseudo))
}

fn sweep_table(points: &[laft_core::tune::SweepPoint], header: &str) -> String {
    let mut out = format!("# {header}\tpseudo_val_auroc\n");
    for p in points {
        let _ = writeln!(out, "{}\t{:.4}", p.value, p.auroc);
    }
    out
}

pub fn tune(ctx: &Context, args: &crate::TuneArgs) -> Result<()> {
    let pseudo = pseudo_validation_samples(ctx, &args.train_manifest)?;
    let channels = channels_of(&pseudo)?;
    let net = load_denoiser(ctx, &args.checkpoint, channels)?;
    let coreset = load_coreset(&args.coreset)?;
    let sched = ctx.schedule()?;
    let pipeline = Pipeline {
        sched: &sched,
        denoiser: &net,
        coreset: Some(&coreset),
        settings: ctx.settings(),
    };
    let (tau_star, tau_table) = pipeline.select_tau(&ctx.cfg.tune.tau_values, &pseudo)?;
    let (k_star, k_table) = pipeline.select_k(&ctx.cfg.tune.k_values, tau_star, &pseudo)?;

    fs::write(ctx.out.join("tune_tau.tsv"), sweep_table(&tau_table, "tau"))?;
    fs::write(ctx.out.join("tune_k.tsv"), sweep_table(&k_table, "k"))?;
    fs::write(
        ctx.out.join("selected.tsv"),
        format!("tau\t{tau_star}\nk\t{k_star}\n"),
    )?;
    Ok(())
}

fn pipeline_inputs(
    ctx: &Context,
    args: &crate::InferArgs,
    need_coreset: bool,
) -> Result<(Vec<EvalSample>, NetDenoiser, Option<CoreSet>, NoiseSchedule, usize)> {
    let (_, samples) = load_samples(&args.manifest)?;
    let channels = channels_of(&samples)?;
    let net = load_denoiser(ctx, &args.checkpoint, channels)?;
    let coreset = match &args.coreset {
        Some(p) => Some(load_coreset(p)?),
        None if need_coreset => {
            return Err(Error::config(
                "this command needs --coreset for feature editing".to_string(),
            ))
        }
        None => None,
    };
    let sched = ctx.schedule()?;
    let tau = args.tau.unwrap_or(ctx.cfg.reconstruct.tau);
    if tau == 0 || tau > sched.t_max() {
        return Err(Error::config(format!(
            "reconstruct.tau {tau} outside [1, {}]",
            sched.t_max()
        )));
    }
    Ok((samples, net, coreset, sched, tau))
}

pub fn reconstruct(ctx: &Context, args: &crate::InferArgs, with_editing: bool) -> Result<()> {
    let (samples, net, coreset, sched, tau) = pipeline_inputs(ctx, args, with_editing)?;
    let pipeline = Pipeline {
        sched: &sched,
        denoiser: &net,
        coreset: coreset.as_ref(),
        settings: ctx.settings(),
    };
    let edit = with_editing.then(|| {
        let mut e = ctx.edit();
        if let Some(k) = args.k {
            e.k = k;
        }
        e
    });
    let dir = ctx.out.join("recon");
    fs::create_dir_all(&dir)?;
    for s in &samples {
        let rec = pipeline.reconstruct_sample(&s.x0, tau, edit, 0, s.index)?;
        save_tensor(dir.join(format!("{}.laft", s.id)), &rec)?;
    }
    Ok(())
}

pub fn eval(ctx: &Context, args: &crate::InferArgs) -> Result<()> {
    let (samples, net, coreset, sched, tau) = pipeline_inputs(ctx, args, true)?;
    let pipeline = Pipeline {
        sched: &sched,
        denoiser: &net,
        coreset: coreset.as_ref(),
        settings: ctx.settings(),
    };
    let mut edit = ctx.edit();
    if let Some(k) = args.k {
        edit.k = k;
    }

    let mut rows: Vec<(String, String, f64)> = Vec::new();
    for (variant, edit_cfg) in [("with_fe", Some(edit)), ("without_fe", None)] {
        let report = pipeline.report(&samples, tau, edit_cfg, 0)?;
        rows.push(("det_auroc".into(), variant.into(), report.det_auroc));
        rows.push(("det_aupr".into(), variant.into(), report.det_aupr));
        if let Some(v) = report.loc_auroc {
            rows.push(("loc_auroc".into(), variant.into(), v));
        }
        if let Some(v) = report.loc_aupro {
            rows.push(("loc_aupro".into(), variant.into(), v));
        }
    }
    let mut out = String::from("# metric\tvariant\tvalue\n");
    for (metric, variant, value) in rows {
        let _ = writeln!(out, "{metric}\t{variant}\t{value:.4}");
    }
    fs::write(ctx.out.join("report.tsv"), out)?;
    Ok(())
}

pub fn heatmap(ctx: &Context, args: &crate::InferArgs, with_editing: bool) -> Result<()> {
    let (samples, net, coreset, sched, tau) = pipeline_inputs(ctx, args, with_editing)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let pipeline = Pipeline {
        sched: &sched,
        denoiser: &net,
        coreset: coreset.as_ref(),
        settings: ctx.settings(),
    };
    let edit = with_editing.then(|| ctx.edit());
    let evaluated = pipeline.evaluate(&samples, tau, edit, 0)?;

    // Per-category scaling: min/max over every map of the same class.
    let mut class_range: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (rec, map) in manifest.records.iter().zip(&evaluated.maps) {
        let (lo, hi) = (
            map.map().min_value() as f64,
            map.map().max_value() as f64,
        );
        let e = class_range.entry(rec.class_id).or_insert((lo, hi));
        e.0 = e.0.min(lo);
        e.1 = e.1.max(hi);
    }

    let dir = ctx.out.join("heatmaps");
    fs::create_dir_all(&dir)?;
    for (rec, map) in manifest.records.iter().zip(&evaluated.maps) {
        let m = map.map();
        write_pgm(
            dir.join(format!("{}.image.pgm", rec.id)),
            m,
            m.min_value() as f64,
            m.max_value() as f64,
        )?;
        let (lo, hi) = class_range[&rec.class_id];
        write_pgm(dir.join(format!("{}.category.pgm", rec.id)), m, lo, hi)?;
    }
    Ok(())
}
