//! Training losses: pen-state cross-entropy, offset likelihood and the
//! saliency equivariance penalty.

use serde::{Deserialize, Serialize};

use crate::autograd::{log_softmax, Graph, Var};
use crate::data::{warp_photo, PairedSample, PhotoSample};
use crate::decoder::{gmm_log_density, unroll_teacher_forced, GmmParams, Unroll};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model};
use crate::saliency::{accumulate_vars, grid_warp, low_res_vars};
use crate::sketch_vector::{apply_affine_offsets, pad_and_mask, AffineTransform, SketchSequence};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub coord: f64,
    pub stroke: f64,
    pub eqv: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub coord: f64,
    pub stroke: f64,
    pub eqv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coord: 1.0,
            stroke: 1.0,
            eqv: 1.0,
        }
    }
}

/// Weighted sum of the components; unit weights give the plain sum.
pub fn total_loss(coord: f64, stroke: f64, eqv: f64, w: &LossWeights) -> LossReport {
    LossReport {
        coord,
        stroke,
        eqv,
        total: w.coord * coord + w.stroke * stroke + w.eqv * eqv,
    }
}

fn valid_indices(mask: &[f64], n: usize) -> Vec<usize> {
    (0..n).filter(|&t| mask.get(t).copied().unwrap_or(0.0) > 0.0).collect()
}

/// Mean cross-entropy of softmaxed pen logits over valid steps.
pub fn pen_state_loss(logits: &[[f64; 3]], gt: &[[f64; 3]], mask: &[f64]) -> Result<f64> {
    if logits.len() != gt.len() {
        return Err(Error::Shape("logit and label counts differ".into()));
    }
    let idx = valid_indices(mask, logits.len());
    if idx.is_empty() {
        return Err(Error::EmptyAccumulation);
    }
    let s: f64 = idx
        .iter()
        .map(|&t| {
            let ls = log_softmax(&logits[t]);
            -gt[t].iter().zip(&ls).map(|(p, q)| p * q).sum::<f64>()
        })
        .sum();
    Ok(s / idx.len() as f64)
}

/// Mean negative log-likelihood of the offsets over valid steps.
pub fn stroke_loss(gmms: &[GmmParams], offsets: &[(f64, f64)], mask: &[f64]) -> Result<f64> {
    if gmms.len() != offsets.len() {
        return Err(Error::Shape("parameter and offset counts differ".into()));
    }
    let idx = valid_indices(mask, gmms.len());
    if idx.is_empty() {
        return Err(Error::EmptyAccumulation);
    }
    let mut s = 0.0;
    for &t in &idx {
        let (dx, dy) = offsets[t];
        s -= gmm_log_density(dx, dy, &gmms[t])?.max(crate::autograd::PROB_FLOOR.ln());
    }
    Ok(s / idx.len() as f64)
}

/// Graph nodes for the sequence losses of one teacher-forced unroll.
pub struct SequenceLoss {
    pub coord: Option<Var>,
    pub stroke: Var,
}

pub fn sequence_loss(g: &mut Graph, model: &Model, un: &Unroll, gt: &SketchSequence) -> Result<SequenceLoss> {
    let cfg = &model.config;
    let n = un.ys.len();
    if n == 0 {
        return Err(Error::EmptyAccumulation);
    }
    let pen_at = match cfg.head {
        HeadKind::Gmm => 6 * cfg.m,
        HeadKind::L1 => 2,
    };
    let mut nll = Vec::with_capacity(n);
    let mut xent = Vec::with_capacity(n);
    for (t, &y) in un.ys.iter().enumerate() {
        let p = gt.points[t];
        let l = match cfg.head {
            HeadKind::Gmm => g.gmm_nll(y, cfg.m, (p.dx, p.dy)),
            HeadKind::L1 => {
                let off = g.slice(y, 0, 2);
                let target = g.constant(crate::tensor::Tensor::vector(vec![p.dx, p.dy]));
                let diff = g.sub(off, target);
                let a = g.abs(diff);
                g.sum(a)
            }
        };
        nll.push(l);
        if cfg.pen_state {
            let logits = g.slice(y, pen_at, 3);
            xent.push(g.softmax_xent(logits, &p.pen));
        }
    }
    let all = g.concat(&nll);
    let stroke = g.mean(all);
    let coord = if cfg.pen_state {
        let all = g.concat(&xent);
        Some(g.mean(all))
    } else {
        None
    };
    Ok(SequenceLoss { coord, stroke })
}

/// `mean |S(A(P)) - A(S(P))|` on the attention grid, both sides decoded
/// along the (correspondingly transformed) sketch.
pub fn equivariance_var(
    g: &mut Graph,
    model: &Model,
    photo: &PhotoSample,
    sketch: &SketchSequence,
    s_orig: Var,
    t: &AffineTransform,
) -> Result<Var> {
    t.validate()?;
    let (_, h, w) = g.value(s_orig).dims3();
    if (t.canvas.height, t.canvas.width) != (photo.height(), photo.width()) {
        return Err(Error::UnsupportedTransform("transform canvas differs from the photo".into()));
    }
    let moved = g.resample(s_orig, grid_warp(h, w, t));
    let photo_t = warp_photo(photo, t);
    let sketch_t = apply_affine_offsets(sketch, t)?;
    let (_, s_t) = low_res_vars(g, model, &photo_t, &sketch_t)?;
    let diff = g.sub(s_t, moved);
    let a = g.abs(diff);
    Ok(g.mean(a))
}

pub fn equivariance_loss(model: &Model, photo: &PhotoSample, sketch: &SketchSequence, t: &AffineTransform) -> Result<f64> {
    let mut g = Graph::new();
    let (_, s) = low_res_vars(&mut g, model, photo, sketch)?;
    let v = equivariance_var(&mut g, model, photo, sketch, s, t)?;
    Ok(g.value(v).item())
}

/// Per-sample training objective as a graph scalar, plus its components.
pub struct SampleLoss {
    pub total: Var,
    pub report: LossReport,
}

pub fn sample_loss(
    g: &mut Graph,
    model: &Model,
    sample: &PairedSample,
    transform: Option<&AffineTransform>,
    weights: &LossWeights,
) -> Result<SampleLoss> {
    let sketch = &sample.sketch;
    let pyramid = encode(g, &model.store, &model.encoder, &sample.photo)?;
    let padded = pad_and_mask(sketch, sketch.len())?;
    let un = unroll_teacher_forced(g, model, &pyramid, &padded)?;
    let seq = sequence_loss(g, model, &un, sketch)?;
    let mut terms = vec![g.scale(seq.stroke, weights.stroke)];
    let coord = match seq.coord {
        Some(c) => {
            terms.push(g.scale(c, weights.coord));
            g.value(c).item()
        }
        None => 0.0,
    };
    let mut eqv = 0.0;
    if let Some(t) = transform.filter(|t| weights.eqv != 0.0 && !t.is_identity()) {
        let (_, s) = accumulate_vars(g, &un.alphas)?;
        let e = equivariance_var(g, model, &sample.photo, sketch, s, t)?;
        eqv = g.value(e).item();
        terms.push(g.scale(e, weights.eqv));
    }
    let stroke = g.value(seq.stroke).item();
    let all = g.concat(&terms);
    let total = g.sum(all);
    Ok(SampleLoss {
        total,
        report: total_loss(coord, stroke, eqv, weights),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::split_output;

    #[test]
    fn pen_loss_examples() {
        let l = pen_state_loss(&[[50.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]], &[1.0]).unwrap();
        assert!(l < 1e-20);
        let l = pen_state_loss(&[[0.0; 3], [0.0; 3]], &[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], &[1.0, 1.0]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stroke_loss_at_mean() {
        let mut y = vec![0.0; 9];
        y[1] = 0.3;
        y[2] = -0.7;
        let (g, _) = split_output(&y, 1).unwrap();
        let l = stroke_loss(&[g], &[(0.3, -0.7)], &[1.0]).unwrap();
        assert!((l - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_component_leaves_loss() {
        let y1 = [0.0, 0.4, -0.2, 0.3, -0.5, 0.6, 0.0, 0.0, 0.0];
        let (g1, _) = split_output(&y1, 1).unwrap();
        let y2 = [0.0, 0.0, 0.4, 0.4, -0.2, -0.2, 0.3, 0.3, -0.5, -0.5, 0.6, 0.6, 0.0, 0.0, 0.0];
        let (g2, _) = split_output(&y2, 2).unwrap();
        let a = stroke_loss(&[g1], &[(1.0, 0.5)], &[1.0]).unwrap();
        let b = stroke_loss(&[g2], &[(1.0, 0.5)], &[1.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn report_sums() {
        let r = total_loss(1.0, 2.0, 0.5, &LossWeights::default());
        assert_eq!(r.total, 3.5);
        let r = total_loss(1.0, 2.0, 0.5, &LossWeights { eqv: 0.0, ..LossWeights::default() });
        assert_eq!(r.total, 3.0);
    }
}
