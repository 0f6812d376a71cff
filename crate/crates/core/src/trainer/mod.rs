//! Training loop, checkpoints, evaluation, and the probe, fine-tune and
//! ablation protocols.

mod ablation;
mod checkpoint;
mod eval;
mod probe;

pub use ablation::{run_ablation_suite, AblationRow, AblationTable, Variant};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use eval::{
    concentration, evaluate, evaluate_predictions, per_image_csv, Concentration, EvalConfig, EvalMode, EvalSummary,
    ModeReport,
};
pub use probe::{finetune_fraction, fraction_subset, linear_probe, FinetuneConfig, ProbeConfig, ProbeOutcome};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{normalize_sketches, sample_affine, AffineConfig, PairedSample};
use crate::error::{Error, Result};
use crate::losses::{sample_loss, LossReport, LossWeights};
use crate::model::{AttentionKind, Backbone, HeadKind, Model, ModelConfig};
use crate::optim::{clip_global_norm, Adam};
use crate::params::ParamGrads;
use crate::sketch_vector::{compute_offset_scale, AffineTransform, SketchSequence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_eqv: bool,
    pub attention_1d: bool,
    pub single_scale: bool,
    pub no_pen_state: bool,
    pub l1_regression: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub t_max: usize,
    pub m: usize,
    pub image_side: usize,
    pub backbone: Backbone,
    pub d_h: usize,
    pub d: usize,
    pub ablations: Ablations,
    pub seed: u64,
    /// Global gradient-norm cap; zero disables clipping.
    pub clip_norm: f64,
    pub affine: AffineConfig,
    pub loss_weights: LossWeights,
    /// Worker threads for per-sample gradients; zero picks the rayon default.
    pub jobs: usize,
    /// Samples used for the before/after loss snapshot.
    pub snapshot_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            epochs: 50,
            t_max: 250,
            m: 20,
            image_side: 256,
            backbone: Backbone::Full,
            d_h: 512,
            d: 256,
            ablations: Ablations::default(),
            seed: 0,
            clip_norm: 1.0,
            affine: AffineConfig::default(),
            loss_weights: LossWeights::default(),
            jobs: 1,
            snapshot_samples: 64,
        }
    }
}

impl TrainConfig {
    /// Small CPU preset: tiny backbone on 64x64 photos.
    pub fn desk() -> Self {
        let m = ModelConfig::tiny();
        Self {
            lr: 1e-3,
            batch_size: 8,
            epochs: 40,
            t_max: 48,
            m: m.m,
            image_side: m.image_side,
            backbone: Backbone::Tiny,
            d_h: m.d_h,
            d: m.d,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let a = self.ablations;
        ModelConfig {
            backbone: self.backbone,
            image_side: self.image_side,
            d_h: self.d_h,
            d: self.d,
            m: self.m,
            attention: if a.attention_1d {
                AttentionKind::Flat
            } else {
                AttentionKind::Spatial
            },
            multiscale: !a.single_scale,
            pen_state: !a.no_pen_state,
            head: if a.l1_regression { HeadKind::L1 } else { HeadKind::Gmm },
        }
    }

    /// Loss weights with ablated terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss_weights;
        if self.ablations.no_eqv {
            w.eqv = 0.0;
        }
        if self.ablations.no_pen_state {
            w.coord = 0.0;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.t_max == 0 || self.m == 0 {
            return Err(Error::Config("batch_size, epochs, t_max and m must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        self.affine.validate()?;
        self.model_config().validate()
    }
}

/// One logged optimizer step: batch-mean loss components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub samples: usize,
    pub coord: f64,
    pub stroke: f64,
    pub eqv: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub transform: Option<AffineTransform>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
    /// Mean losses on the snapshot subset before the first and after the last epoch run.
    pub initial: LossReport,
    pub final_report: LossReport,
}

#[derive(Debug, Default)]
pub struct TrainOptions {
    /// Checkpoint and log destination.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Stop after this many epochs of the current run (the checkpoint still
    /// records the absolute epoch).
    pub max_epochs: Option<usize>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Offset scale of a pixel-unit dataset.
pub fn dataset_scale(data: &[PairedSample]) -> Result<f64> {
    let seqs: Vec<SketchSequence> = data.iter().map(|s| s.sketch.rescaled(1.0)).collect();
    compute_offset_scale(&seqs)
}

fn check_dataset(cfg: &TrainConfig, data: &[PairedSample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::DegenerateDataset("training set is empty".into()));
    }
    for s in data {
        if s.sketch.len() > cfg.t_max {
            return Err(Error::SequenceTooLong {
                len: s.sketch.len(),
                max: cfg.t_max,
            });
        }
        if (s.photo.height(), s.photo.width()) != (cfg.image_side, cfg.image_side) {
            return Err(Error::Shape(format!(
                "photo {} is {}x{}, expected side {}",
                s.photo.id,
                s.photo.height(),
                s.photo.width(),
                cfg.image_side
            )));
        }
    }
    Ok(())
}

/// Gradient of the weighted loss of one sample.
pub fn sample_gradients(
    model: &Model,
    sample: &PairedSample,
    transform: Option<&AffineTransform>,
    weights: &LossWeights,
) -> Result<(ParamGrads, LossReport)> {
    let mut g = Graph::new();
    let l = sample_loss(&mut g, model, sample, transform, weights)?;
    let grads = g.backward(l.total);
    let mut acc = ParamGrads::zeros_like(&model.store);
    g.accumulate_param_grads(&grads, &mut acc, 1.0);
    Ok((acc, l.report))
}

/// Mean teacher-forced losses over `data` (sketches already normalized).
pub fn dataset_losses(model: &Model, data: &[PairedSample], weights: &LossWeights) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::DegenerateDataset("no samples to score".into()));
    }
    let mut acc = LossReport {
        coord: 0.0,
        stroke: 0.0,
        eqv: 0.0,
        total: 0.0,
    };
    for s in data {
        let mut g = Graph::new();
        let r = sample_loss(&mut g, model, s, None, weights)?.report;
        acc.coord += r.coord;
        acc.stroke += r.stroke;
        acc.total += r.total;
    }
    let n = data.len() as f64;
    acc.coord /= n;
    acc.stroke /= n;
    acc.total /= n;
    Ok(acc)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    epoch: usize,
    step: usize,
    sample_ids: Vec<&'a str>,
    transform: Option<AffineTransform>,
    reports: Vec<Option<LossReport>>,
    detail: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Train on pixel-unit samples. A resumed run continues from the stored
/// epoch with the stored optimizer and random state.
pub fn train(cfg: &TrainConfig, data: &[PairedSample], opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(cfg, data)?;
    let mut ck = match opts.resume {
        Some(ck) => {
            if ck.model.config != cfg.model_config() {
                return Err(Error::Checkpoint("checkpoint was trained with a different architecture".into()));
            }
            ck
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut model = Model::new(cfg.model_config(), &mut rng)?;
            model.scale_factor = dataset_scale(data)?;
            let optimizer = Adam::new(&model.store, cfg.lr);
            Checkpoint {
                train: cfg.clone(),
                model,
                optimizer: Some(optimizer),
                epoch: 0,
                rng,
            }
        }
    };
    ck.train = cfg.clone();
    let mut opt = ck.optimizer.take().unwrap_or_else(|| Adam::new(&ck.model.store, cfg.lr));
    opt.lr = cfg.lr;
    let samples = normalize_sketches(data, ck.model.scale_factor);
    let weights = cfg.effective_weights();
    let use_eqv = weights.eqv != 0.0;
    let snapshot = &samples[..cfg.snapshot_samples.clamp(1, samples.len())];
    let initial = dataset_losses(&ck.model, snapshot, &weights)?;
    let workers = pool(if cfg.jobs == 0 { rayon::current_num_threads() } else { cfg.jobs })?;

    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(LOG_FILE);
            let f = fs::OpenOptions::new()
                .create(true)
                .append(ck.epoch > 0)
                .write(true)
                .truncate(ck.epoch == 0)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            Some((p, f))
        }
        None => None,
    };

    let canvas = samples[0].photo.canvas();
    let mut log = Vec::new();
    let mut step = (ck.epoch * samples.len().div_ceil(cfg.batch_size)) as usize;
    let last_epoch = match opts.max_epochs {
        Some(k) => (ck.epoch + k).min(cfg.epochs),
        None => cfg.epochs,
    };
    while ck.epoch < last_epoch {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ck.rng);
        for batch in order.chunks(cfg.batch_size) {
            let transform = if use_eqv {
                Some(sample_affine(&mut ck.rng, &cfg.affine, canvas)?)
            } else {
                None
            };
            let model = &ck.model;
            let results: Vec<Result<(ParamGrads, LossReport)>> = workers.install(|| {
                batch
                    .par_iter()
                    .map(|&i| sample_gradients(model, &samples[i], transform.as_ref(), &weights))
                    .collect()
            });
            let mut grads = ParamGrads::zeros_like(&model.store);
            let mut reports = Vec::with_capacity(batch.len());
            let mut failure = None;
            for r in results {
                match r {
                    Ok((g, rep)) => {
                        grads.merge(&g);
                        reports.push(Some(rep));
                    }
                    Err(e) => {
                        failure.get_or_insert(e.to_string());
                        reports.push(None);
                    }
                }
            }
            let n = batch.len() as f64;
            let mean = |f: fn(&LossReport) -> f64| reports.iter().flatten().map(f).sum::<f64>() / n;
            let entry = StepLog {
                epoch: ck.epoch,
                step,
                samples: batch.len(),
                coord: mean(|r| r.coord),
                stroke: mean(|r| r.stroke),
                eqv: mean(|r| r.eqv),
                total: mean(|r| r.total),
                grad_norm: 0.0,
                transform,
            };
            let finite = failure.is_none() && entry.total.is_finite() && grads.all_finite();
            if !finite {
                let detail = failure.unwrap_or_else(|| "loss or gradient is not finite".into());
                if let Some(dir) = &opts.out_dir {
                    let dump = NonFiniteDump {
                        epoch: ck.epoch,
                        step,
                        sample_ids: batch.iter().map(|&i| samples[i].photo.id.as_str()).collect(),
                        transform,
                        reports,
                        detail: detail.clone(),
                    };
                    let p = dir.join("nonfinite_batch.json");
                    fs::write(&p, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&p, e))?;
                }
                return Err(Error::NonFiniteLoss {
                    epoch: ck.epoch,
                    step,
                    detail,
                });
            }
            grads.scale(1.0 / n);
            let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
            opt.update(&mut ck.model.store, &grads);
            if !ck.model.store.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: ck.epoch,
                    step,
                    detail: "parameters became non-finite".into(),
                });
            }
            let entry = StepLog { grad_norm, ..entry };
            if let Some((p, f)) = &mut log_file {
                writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&*p, e))?;
            }
            log::debug!(
                "epoch {} step {} total {:.4} stroke {:.4} eqv {:.4}",
                entry.epoch,
                entry.step,
                entry.total,
                entry.stroke,
                entry.eqv
            );
            log.push(entry);
            step += 1;
        }
        ck.epoch += 1;
        if let Some(dir) = &opts.out_dir {
            ck.optimizer = Some(opt.clone());
            write_atomic(&dir.join(CHECKPOINT_FILE), &ck.to_bytes()?)?;
            ck.optimizer = None;
        }
        log::info!("finished epoch {}/{}", ck.epoch, cfg.epochs);
    }
    ck.optimizer = Some(opt);
    let final_report = dataset_losses(&ck.model, snapshot, &weights)?;
    Ok(TrainOutcome {
        checkpoint: ck,
        log,
        initial,
        final_report,
    })
}
