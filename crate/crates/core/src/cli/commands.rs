use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::cli::config::ExperimentConfig;
use crate::data::{generate_dataset, read_dataset, split_by_subject, write_dataset, Dataset, Splits};
use crate::encoders::{Embedding, Encoder, Modality};
use crate::error::{Error, Result};
use crate::eval::{accuracy, attribution_counts, ensemble_probs, probe_accuracy, train_probe, Metrics};
use crate::numerics::{load_checkpoint, save_checkpoint, ParamStore};
use crate::train::{
    classifier_probs, correspondence_auc, embed_indices, fit_motion_stats, init_head, predictions, prepare, pretrain,
    spectrograms, stats_from_params, stats_params, train_classifier, PreparedSet,
};

/// Which classifier `supervised` trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Video,
    Motion,
    Ensemble,
}

impl Target {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "video" => Ok(Self::Video),
            "motion" => Ok(Self::Motion),
            "ensemble" => Ok(Self::Ensemble),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }

    fn single(self) -> Result<Modality> {
        match self {
            Self::Video => Ok(Modality::Video),
            Self::Motion => Ok(Modality::Motion),
            Self::Ensemble => Err(Error::Config("ensemble is only valid for supervised".into())),
        }
    }
}

pub fn metrics_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("{command}_metrics.json"))
}

fn write_metrics(out: &Path, metrics: &Metrics) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = metrics_path(out, &metrics.command);
    let tmp = path.with_extension("json.tmp");
    let mut text = serde_json::to_string_pretty(metrics)?;
    text.push('\n');
    fs::write(&tmp, text)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Loaded dataset with its split and encoder inputs.
struct Workspace {
    dataset: Dataset,
    splits: Splits,
    specs: Vec<crate::signal::Spectrogram>,
}

impl Workspace {
    fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = &cfg.paths.dataset;
        if !dir.join(crate::data::storage::MANIFEST_FILE).exists() {
            return Err(Error::Config(format!("no dataset at {}", dir.display())));
        }
        let dataset = read_dataset(dir)?;
        let splits = split_by_subject(&dataset.pairs, &cfg.split)?;
        let specs = spectrograms(&dataset.pairs, cfg.stft.n_fft, cfg.stft.hop)?;
        Ok(Self { dataset, splits, specs })
    }

    fn prepared(&self, params: &ParamStore) -> Result<PreparedSet> {
        prepare(&self.dataset.pairs, &self.specs, &stats_from_params(params)?)
    }

    fn labels(&self, pool: &[usize]) -> Vec<usize> {
        pool.iter().map(|&i| self.dataset.pairs[i].action_label).collect()
    }
}

fn encoders(cfg: &ExperimentConfig) -> Result<(Encoder, Encoder)> {
    Ok((
        Encoder::new(cfg.video_encoder.clone())?,
        Encoder::new(cfg.motion_encoder.clone())?,
    ))
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    if cfg.n_pairs == 0 {
        return Err(Error::Config("n_pairs must be positive".into()));
    }
    let pairs = generate_dataset(&cfg.generator, cfg.n_pairs)?;
    let manifest = write_dataset(out, &cfg.generator, &pairs)?;
    let splits = split_by_subject(&pairs, &cfg.split)?;
    let subjects: std::collections::BTreeSet<u32> = pairs.iter().map(|p| p.subject_id).collect();
    println!(
        "wrote {} pairs ({} classes, {} subjects) to {}; split train/val/test = {}/{}/{}",
        manifest.n_pairs,
        manifest.num_classes,
        subjects.len(),
        out.display(),
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    let mut m = Metrics::new("gen", cfg.seed, cfg.to_json());
    m.extra.insert("n_pairs".into(), json!(manifest.n_pairs));
    m.extra.insert("subjects".into(), json!(subjects.len()));
    m.extra.insert(
        "split_sizes".into(),
        json!([splits.train.len(), splits.validation.len(), splits.test.len()]),
    );
    Ok(m)
}

pub fn cmd_pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    cfg.validate()?;
    let ws = Workspace::open(cfg)?;
    let (video, motion) = encoders(cfg)?;
    let stats = fit_motion_stats(&ws.specs, &ws.splits.train)?;
    let norm = stats_params(&stats)?;
    let data = prepare(&ws.dataset.pairs, &ws.specs, &stats)?;
    let mut params = ParamStore::new();
    video.init_params(&mut params)?;
    motion.init_params(&mut params)?;
    params.round_to_f32();
    fs::create_dir_all(out)?;
    let ckpt = out.join("checkpoint.egos");
    let save = |p: &ParamStore| -> Result<()> {
        let mut all = p.clone();
        all.round_to_f32();
        all.merge_from(&norm)?;
        save_checkpoint(&all, &ckpt)
    };
    save(&params)?;
    let report = pretrain(&video, &motion, &mut params, &data, &ws.splits, &cfg.train_config(), |epoch, p| {
        save(p)?;
        println!("epoch {epoch}: checkpoint saved");
        Ok(())
    })?;
    save(&params)?;
    for (i, (v, t)) in report.loss_curve.iter().zip(&report.train_loss_curve).enumerate() {
        println!("epoch {:>3}  train loss {t:.5}  validation loss {v:.5}", i + 1);
    }
    println!("test correspondence AUC {:.4}", report.test_auc);
    let mut m = Metrics::new("pretrain", cfg.seed, cfg.to_json());
    m.roc_auc = Some(report.test_auc);
    m.loss_curve = report.loss_curve;
    m.extra.insert("train_loss_curve".into(), json!(report.train_loss_curve));
    m.extra.insert("checkpoint".into(), json!(ckpt));
    Ok(m)
}

fn load_run_checkpoint(cfg: &ExperimentConfig) -> Result<ParamStore> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(Error::Config(format!("no checkpoint at {}", path.display())));
    }
    load_checkpoint(&path)
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Metrics> {
    let ws = Workspace::open(cfg)?;
    if ws.splits.test.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    let (video, motion) = encoders(cfg)?;
    let params = load_run_checkpoint(cfg)?;
    video.check_params(&params)?;
    motion.check_params(&params)?;
    let data = ws.prepared(&params)?;
    let auc = correspondence_auc(&video, &motion, &params, &data, &ws.splits.test, cfg.eval_batch_size)?;
    println!("test correspondence AUC {auc:.4} over {} pairs", ws.splits.test.len());
    let mut m = Metrics::new("eval", cfg.seed, cfg.to_json());
    m.roc_auc = Some(auc);
    m.extra.insert("checkpoint".into(), json!(cfg.checkpoint_path()));
    Ok(m)
}

fn labeled(embs: Vec<Embedding>, labels: Vec<usize>) -> Vec<(Embedding, usize)> {
    embs.into_iter().zip(labels).collect()
}

pub fn cmd_probe(cfg: &ExperimentConfig, target: Target) -> Result<Metrics> {
    let modality = target.single()?;
    let ws = Workspace::open(cfg)?;
    let (video, motion) = encoders(cfg)?;
    let encoder = match modality {
        Modality::Video => video,
        Modality::Motion => motion,
    };
    let params = load_run_checkpoint(cfg)?;
    encoder.check_params(&params)?;
    let data = ws.prepared(&params)?;
    let inputs = data.inputs(modality);
    let train = labeled(
        embed_indices(&encoder, &params, inputs, &ws.splits.train)?,
        ws.labels(&ws.splits.train),
    );
    let test = labeled(
        embed_indices(&encoder, &params, inputs, &ws.splits.test)?,
        ws.labels(&ws.splits.test),
    );
    let model = train_probe(&train, &cfg.probe)?;
    let report = probe_accuracy(&model, &test)?;
    let train_report = probe_accuracy(&model, &train)?;
    println!(
        "{} probe: test accuracy {:.4}, train accuracy {:.4}",
        modality.name(),
        report.overall,
        train_report.overall
    );
    let mut m = Metrics::new("probe", cfg.seed, cfg.to_json());
    m.set_accuracy(&report);
    m.extra.insert("modality".into(), json!(modality.name()));
    m.extra.insert("train_accuracy".into(), json!(train_report.overall));
    m.extra.insert("checkpoint".into(), json!(cfg.checkpoint_path()));
    Ok(m)
}

/// Trains one supervised classifier; returns its test-split probabilities and validation curve.
fn supervised_one(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    encoder: &Encoder,
    data: &PreparedSet,
    out: &Path,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut params = ParamStore::new();
    encoder.init_params(&mut params)?;
    let head_seed = encoder.config().seed.wrapping_add(1000);
    init_head(encoder, cfg.generator.num_classes, head_seed, &mut params)?;
    params.round_to_f32();
    let ckpt = out.join(format!("supervised_{}.egos", encoder.modality().name()));
    let curve = train_classifier(encoder, &mut params, data, &ws.splits, &cfg.supervised_config(), |_, p| {
        let mut rounded = p.clone();
        rounded.round_to_f32();
        save_checkpoint(&rounded, &ckpt)
    })?;
    save_checkpoint(&params, &ckpt)?;
    Ok((classifier_probs(encoder, &params, data, &ws.splits.test)?, curve))
}

pub fn cmd_supervised(cfg: &ExperimentConfig, out: &Path, target: Target) -> Result<Metrics> {
    cfg.validate()?;
    let ws = Workspace::open(cfg)?;
    if ws.splits.test.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    let (video, motion) = encoders(cfg)?;
    let stats = fit_motion_stats(&ws.specs, &ws.splits.train)?;
    let data = prepare(&ws.dataset.pairs, &ws.specs, &stats)?;
    fs::create_dir_all(out)?;
    let labels = ws.labels(&ws.splits.test);
    let mut m = Metrics::new("supervised", cfg.seed, cfg.to_json());
    match target {
        Target::Video | Target::Motion => {
            let encoder = if target == Target::Video { &video } else { &motion };
            let (probs, curve) = supervised_one(cfg, &ws, encoder, &data, out)?;
            let report = accuracy(&predictions(&probs), &labels)?;
            println!("{} classifier: test accuracy {:.4}", encoder.modality().name(), report.overall);
            m.set_accuracy(&report);
            m.loss_curve = curve;
            m.extra.insert("modality".into(), json!(encoder.modality().name()));
        }
        Target::Ensemble => {
            let (vp, vcurve) = supervised_one(cfg, &ws, &video, &data, out)?;
            let (mp, mcurve) = supervised_one(cfg, &ws, &motion, &data, out)?;
            let ep = vp
                .iter()
                .zip(&mp)
                .map(|(p, q)| ensemble_probs(p, q))
                .collect::<Result<Vec<_>>>()?;
            let (vpred, mpred, epred) = (predictions(&vp), predictions(&mp), predictions(&ep));
            let vr = accuracy(&vpred, &labels)?;
            let mr = accuracy(&mpred, &labels)?;
            let er = accuracy(&epred, &labels)?;
            let counts = attribution_counts(&vpred, &mpred, &labels)?;
            println!(
                "test accuracy: video {:.4}, motion {:.4}, ensemble {:.4}",
                vr.overall, mr.overall, er.overall
            );
            for (class, c) in &counts {
                println!(
                    "class {class}: video only {}, motion only {}, both {}, neither {}",
                    c.video_only, c.motion_only, c.both, c.neither
                );
            }
            m.set_accuracy(&er);
            m.set_attribution(&counts);
            m.loss_curve = vcurve.iter().zip(&mcurve).map(|(a, b)| 0.5 * (a + b)).collect();
            m.extra.insert("modality".into(), json!("ensemble"));
            m.extra.insert("video_acc_overall".into(), json!(vr.overall));
            m.extra.insert("motion_acc_overall".into(), json!(mr.overall));
            m.extra.insert("video_acc_per_class".into(), json!(vr.per_class));
            m.extra.insert("motion_acc_per_class".into(), json!(mr.per_class));
            m.extra.insert("video_loss_curve".into(), json!(vcurve));
            m.extra.insert("motion_loss_curve".into(), json!(mcurve));
        }
    }
    Ok(m)
}

/// Runs a command and writes its metrics file (not for `gen`, whose output is the dataset).
pub fn run_and_record(
    command: &str,
    cfg: &ExperimentConfig,
    out: &Path,
    target: Option<Target>,
) -> Result<Metrics> {
    let m = match command {
        "gen" => return cmd_gen(cfg, out),
        "pretrain" => cmd_pretrain(cfg, out)?,
        "eval" => cmd_eval(cfg)?,
        "probe" => cmd_probe(cfg, target.unwrap_or(Target::Video))?,
        "supervised" => cmd_supervised(cfg, out, target.unwrap_or(Target::Ensemble))?,
        other => return Err(Error::Config(format!("unknown command {other:?}"))),
    };
    let path = write_metrics(out, &m)?;
    println!("metrics written to {}", path.display());
    Ok(m)
}
