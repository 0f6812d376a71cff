use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph, Var};
use crate::data::PairedSample;
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, MetricConfig};
use crate::model::Model;
use crate::optim::{clip_global_norm, Adam};
use crate::params::{uniform_init, ParamGrads, ParamId, ParamStore};
use crate::resample::SpatialMap;
use crate::tensor::Tensor;

use super::eval::evaluate_predictions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// 1 or 3.
    pub kernel: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kernel: 1,
            epochs: 40,
            lr: 3e-2,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub fraction: f64,
    /// Optimizer updates, independent of the subset size.
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            steps: 500,
            lr: 1e-3,
            batch_size: 4,
            kernel: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub report: EvalReport,
    /// Every backbone parameter is bit-identical after training.
    pub backbone_unchanged: bool,
    /// Mean training loss per epoch (per update for fine-tuning).
    pub losses: Vec<f64>,
}

struct Head {
    w: ParamId,
    b: ParamId,
    kernel: usize,
}

impl Head {
    fn register(store: &mut ParamStore, channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Config(format!("probe kernel must be 1 or 3, got {kernel}")));
        }
        let fan_in = channels * kernel * kernel;
        let w = store.register("probe.w", uniform_init(rng, &[1, channels, kernel, kernel], fan_in, 1.0));
        let b = store.register("probe.b", Tensor::vector(vec![0.0]));
        Ok(Self { w, b, kernel })
    }

    /// Pixel logits `(1, H, W)` from a feature map upsampled to the photo.
    fn logits(&self, g: &mut Graph, store: &ParamStore, f_l: Var, side: usize) -> Var {
        let (_, h, w) = g.value(f_l).dims3();
        let up = g.resample(f_l, Rc::new(SpatialMap::bilinear(h, w, side, side)));
        let wv = g.param(store, self.w);
        let bv = g.param(store, self.b);
        g.conv2d(up, wv, Some(bv), 1, self.kernel / 2)
    }
}

fn target(s: &PairedSample) -> Result<Rc<Vec<f64>>> {
    s.mask_f64()
        .map(Rc::new)
        .ok_or_else(|| Error::DegenerateDataset(format!("sample {} has no mask", s.photo.id)))
}

fn predict(g: &Graph, logits: Var) -> Vec<f64> {
    g.value(logits).data().iter().map(|&v| sigmoid(v)).collect()
}

fn backbone_snapshot(model: &Model) -> Vec<Tensor> {
    model.store.ids_with_prefix("encoder.").map(|id| model.store.get(id).clone()).collect()
}

/// Train one convolution on frozen, bilinearly upsampled last-level
/// features with pixel-wise binary cross-entropy.
pub fn linear_probe(
    model: &Model,
    train: &[PairedSample],
    test: &[PairedSample],
    cfg: &ProbeConfig,
    metric: &MetricConfig,
) -> Result<ProbeOutcome> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::DegenerateDataset("probe needs training and test samples".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("probe epochs, batch size and lr must be positive".into()));
    }
    let before = backbone_snapshot(model);
    let features = |s: &PairedSample| -> Result<Tensor> {
        let mut g = Graph::new();
        let pyr = encode(&mut g, &model.store, &model.encoder, &s.photo)?;
        Ok(g.value(pyr.f_l).clone())
    };
    let train_f = train.iter().map(features).collect::<Result<Vec<_>>>()?;
    let targets = train.iter().map(target).collect::<Result<Vec<_>>>()?;
    let channels = train_f[0].shape()[0];
    let side = train[0].photo.height();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let head = Head::register(&mut store, channels, cfg.kernel, &mut rng)?;
    let mut opt = Adam::new(&store, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ParamGrads::zeros_like(&store);
            for &i in batch {
                let mut g = Graph::new();
                let x = g.constant(train_f[i].clone());
                let z = head.logits(&mut g, &store, x, side);
                let l = g.bce_with_logits(z, targets[i].clone());
                total += g.value(l).item();
                let gr = g.backward(l);
                g.accumulate_param_grads(&gr, &mut grads, 1.0 / batch.len() as f64);
            }
            opt.update(&mut store, &grads);
        }
        losses.push(total / train.len() as f64);
    }

    let preds = test
        .iter()
        .map(|s| {
            let mut g = Graph::new();
            let x = g.constant(features(s)?);
            let z = head.logits(&mut g, &store, x, s.photo.height());
            Ok(predict(&g, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let (report, _) = evaluate_predictions(&preds, test, metric)?;
    Ok(ProbeOutcome {
        report,
        backbone_unchanged: backbone_snapshot(model) == before,
        losses,
    })
}

/// Seed-deterministic subset of `floor(fraction * n)` indices.
pub fn fraction_subset(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let k = (fraction * n as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} of {n} samples selects no sample"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Fine-tune the backbone together with a convolutional head on a labelled
/// fraction of `train`.
pub fn finetune_fraction(
    init: &Model,
    train: &[PairedSample],
    test: &[PairedSample],
    cfg: &FinetuneConfig,
    metric: &MetricConfig,
) -> Result<ProbeOutcome> {
    if test.is_empty() {
        return Err(Error::DegenerateDataset("fine-tuning needs test samples".into()));
    }
    if cfg.steps == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("fine-tune steps, batch size and lr must be positive".into()));
    }
    let subset = fraction_subset(train.len(), cfg.fraction, cfg.seed)?;
    let targets = subset.iter().map(|&i| target(&train[i])).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut store = init.store.clone();
    for id in store.ids().collect::<Vec<_>>() {
        let frozen = !store.name(id).starts_with("encoder.conv");
        store.set_frozen(id, frozen);
    }
    let channels = crate::encoder::pyramid_channels(init.config.backbone).0;
    let head = Head::register(&mut store, channels, cfg.kernel, &mut rng)?;
    let mut opt = Adam::new(&store, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    for _ in 0..cfg.steps {
        let mut grads = ParamGrads::zeros_like(&store);
        let mut total = 0.0;
        let b = cfg.batch_size.min(subset.len());
        for _ in 0..b {
            if order.is_empty() {
                order = (0..subset.len()).collect();
                order.shuffle(&mut rng);
            }
            let k = order.pop().expect("refilled");
            let s = &train[subset[k]];
            let mut g = Graph::new();
            let pyr = encode(&mut g, &store, &init.encoder, &s.photo)?;
            let z = head.logits(&mut g, &store, pyr.f_l, s.photo.height());
            let l = g.bce_with_logits(z, targets[k].clone());
            total += g.value(l).item();
            let gr = g.backward(l);
            g.accumulate_param_grads(&gr, &mut grads, 1.0 / b as f64);
        }
        clip_global_norm(&mut grads, 1.0);
        opt.update(&mut store, &grads);
        losses.push(total / b as f64);
    }
    let preds = test
        .iter()
        .map(|s| {
            let mut g = Graph::new();
            let pyr = encode(&mut g, &store, &init.encoder, &s.photo)?;
            let z = head.logits(&mut g, &store, pyr.f_l, s.photo.height());
            Ok(predict(&g, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let (report, _) = evaluate_predictions(&preds, test, metric)?;
    Ok(ProbeOutcome {
        report,
        backbone_unchanged: false,
        losses,
    })
}
