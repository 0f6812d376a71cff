use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PairedSample;
use crate::decoder::SampleOptions;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairs, EvalReport, ImageScores, MetricConfig, Pair};
use crate::model::Model;
use crate::saliency::{predict_low_res, upsample, LowResSaliency, SaliencyMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Attention along the ground-truth sketch.
    TeacherForced,
    /// Attention along the model's own (greedy by default) sketch.
    FreeRunning,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::TeacherForced => "teacher_forced",
            EvalMode::FreeRunning => "free_running",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub metric: MetricConfig,
    pub t_max: usize,
    pub sampling: SampleOptions,
    pub modes: Vec<EvalMode>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: MetricConfig::default(),
            t_max: 48,
            sampling: SampleOptions::greedy(),
            modes: vec![EvalMode::TeacherForced, EvalMode::FreeRunning],
        }
    }
}

/// How much of the accumulated attention falls on the object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    /// Mean attention mass inside the mask.
    pub mass_inside: f64,
    /// Mean fraction of pixels inside the mask.
    pub area_fraction: f64,
}

impl Concentration {
    pub fn ratio(&self) -> f64 {
        self.mass_inside / self.area_fraction
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: EvalMode,
    pub report: EvalReport,
    pub per_image: Vec<ImageScores>,
    pub concentration: Option<Concentration>,
    /// Mean number of decoded steps per image.
    pub mean_steps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub modes: Vec<ModeReport>,
}

impl EvalSummary {
    pub fn mode(&self, mode: EvalMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Attention mass on mask pixels: each grid cell spreads its mass evenly
/// over the pixels it covers.
pub fn concentration(low: &LowResSaliency, mask: &[u8], side_h: usize, side_w: usize) -> Result<(f64, f64)> {
    if mask.len() != side_h * side_w || side_h % low.height != 0 || side_w % low.width != 0 {
        return Err(Error::Shape("mask does not tile the attention grid".into()));
    }
    let (ch, cw) = (side_h / low.height, side_w / low.width);
    let mut inside = 0.0;
    for i in 0..low.height {
        for j in 0..low.width {
            let mut hits = 0usize;
            for y in i * ch..(i + 1) * ch {
                hits += mask[y * side_w + j * cw..y * side_w + (j + 1) * cw].iter().filter(|&&m| m > 0).count();
            }
            inside += low.mean[i * low.width + j] * hits as f64 / (ch * cw) as f64;
        }
    }
    let area = mask.iter().filter(|&&m| m > 0).count() as f64 / mask.len() as f64;
    Ok((inside, area))
}

fn masks(data: &[PairedSample]) -> Result<Vec<&[u8]>> {
    data.iter()
        .map(|s| {
            s.gt_mask
                .as_deref()
                .ok_or_else(|| Error::DegenerateDataset(format!("sample {} has no mask", s.photo.id)))
        })
        .collect()
}

/// Score precomputed saliency maps against the samples' masks.
pub fn evaluate_predictions(
    preds: &[Vec<f64>],
    data: &[PairedSample],
    cfg: &MetricConfig,
) -> Result<(EvalReport, Vec<ImageScores>)> {
    if preds.len() != data.len() {
        return Err(Error::Shape(format!("{} predictions for {} samples", preds.len(), data.len())));
    }
    let gts = masks(data)?;
    let pairs = preds
        .iter()
        .zip(data)
        .zip(&gts)
        .map(|((p, s), g)| Pair::new(p, g, s.photo.height(), s.photo.width()))
        .collect::<Result<Vec<_>>>()?;
    let (report, mut per) = evaluate_pairs(&pairs, cfg)?;
    for (row, s) in per.iter_mut().zip(data) {
        row.id = s.photo.id.clone();
    }
    Ok((report, per))
}

/// Predict saliency for every sample (pixel-unit sketches) and score it.
pub fn evaluate(model: &Model, data: &[PairedSample], cfg: &EvalConfig) -> Result<EvalSummary> {
    if data.is_empty() {
        return Err(Error::DegenerateDataset("evaluation set is empty".into()));
    }
    cfg.metric.validate()?;
    let gts = masks(data)?;
    let mut modes = Vec::new();
    for &mode in &cfg.modes {
        let lows: Vec<LowResSaliency> = data
            .par_iter()
            .map(|s| {
                let seq = s.sketch.rescaled(model.scale_factor);
                let m = match mode {
                    EvalMode::TeacherForced => SaliencyMode::TeacherForced(&seq),
                    EvalMode::FreeRunning => SaliencyMode::FreeRunning(cfg.sampling),
                };
                predict_low_res(model, &s.photo, m, cfg.t_max)
            })
            .collect::<Result<_>>()?;
        let preds: Vec<Vec<f64>> = lows
            .iter()
            .zip(data)
            .map(|(l, s)| upsample(l, s.photo.height(), s.photo.width()).values)
            .collect();
        let (report, per_image) = evaluate_predictions(&preds, data, &cfg.metric)?;
        let mut inside = 0.0;
        let mut area = 0.0;
        for ((l, s), g) in lows.iter().zip(data).zip(&gts) {
            let (i, a) = concentration(l, g, s.photo.height(), s.photo.width())?;
            inside += i;
            area += a;
        }
        let n = data.len() as f64;
        modes.push(ModeReport {
            mode,
            report,
            per_image,
            concentration: Some(Concentration {
                mass_inside: inside / n,
                area_fraction: area / n,
            }),
            mean_steps: lows.iter().map(|l| l.steps as f64).sum::<f64>() / n,
        });
    }
    Ok(EvalSummary { modes })
}

/// `id,mae,max_fbeta,weighted_fbeta,s_measure` rows.
pub fn per_image_csv(rows: &[ImageScores]) -> String {
    let mut s = String::from("id,mae,max_fbeta,weighted_fbeta,s_measure\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id, r.mae, r.max_fbeta, r.weighted_fbeta, r.s_measure
        ));
    }
    s
}
