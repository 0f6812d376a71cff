//! Saliency from accumulated attention: the mean of the per-step maps over
//! valid steps, divided by its maximum and bilinearly upsampled.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::PhotoSample;
use crate::decoder::{generate, unroll_teacher_forced, AttentionMap, SampleOptions};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::resample::SpatialMap;
use crate::sketch_vector::{pad_and_mask, SketchSequence};

/// Accumulated attention on the feature grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowResSaliency {
    pub height: usize,
    pub width: usize,
    /// Mean of the valid maps (sums to one).
    pub mean: Vec<f64>,
    /// `mean / max(mean)`, or zeros when the accumulation is degenerate.
    pub values: Vec<f64>,
    pub steps: usize,
    pub degenerate: bool,
}

/// Full-resolution saliency in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub source_steps: usize,
}

fn normalize_max(mean: &[f64]) -> (Vec<f64>, bool) {
    let mx = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx > 0.0 {
        (mean.iter().map(|v| v / mx).collect(), false)
    } else {
        (vec![0.0; mean.len()], true)
    }
}

/// Average the maps whose mask entry is nonzero, then max-normalize.
pub fn accumulate(maps: &[AttentionMap], mask: &[f64]) -> Result<LowResSaliency> {
    if mask.len() < maps.len() {
        return Err(Error::Shape(format!("{} maps but {} mask entries", maps.len(), mask.len())));
    }
    let valid: Vec<&AttentionMap> = maps.iter().zip(mask).filter(|(_, &m)| m > 0.0).map(|(a, _)| a).collect();
    let first = valid.first().ok_or(Error::EmptyAccumulation)?;
    let (h, w) = (first.height, first.width);
    let mut mean = vec![0.0; h * w];
    for a in &valid {
        if (a.height, a.width) != (h, w) || a.weights.len() != h * w {
            return Err(Error::Shape("attention maps differ in size".into()));
        }
        for (m, v) in mean.iter_mut().zip(&a.weights) {
            *m += v;
        }
    }
    let t = valid.len() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    let (values, degenerate) = normalize_max(&mean);
    Ok(LowResSaliency {
        height: h,
        width: w,
        mean,
        values,
        steps: valid.len(),
        degenerate,
    })
}

/// Differentiable accumulation of `(1, h, w)` maps: `(mean, mean / max)`.
pub fn accumulate_vars(g: &mut Graph, alphas: &[Var]) -> Result<(Var, Var)> {
    let (&first, rest) = alphas.split_first().ok_or(Error::EmptyAccumulation)?;
    let mut acc = first;
    for &a in rest {
        acc = g.add(acc, a);
    }
    let mean = g.scale(acc, 1.0 / alphas.len() as f64);
    let norm = g.div_max(mean);
    Ok((mean, norm))
}

/// Bilinear upsampling to `out_h x out_w`.
pub fn upsample(s: &LowResSaliency, out_h: usize, out_w: usize) -> SaliencyMap {
    let map = SpatialMap::bilinear(s.height, s.width, out_h, out_w);
    let values = map
        .apply(&s.values, 1)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    SaliencyMap {
        height: out_h,
        width: out_w,
        values,
        source_steps: s.steps,
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SaliencyMode<'a> {
    /// Decode along a given sketch.
    TeacherForced(&'a SketchSequence),
    /// Decode the model's own sketch (use greedy options for determinism).
    FreeRunning(SampleOptions),
}

/// Teacher-forced low-resolution saliency as graph nodes `(mean, normalized)`.
pub fn low_res_vars(g: &mut Graph, model: &Model, photo: &PhotoSample, sketch: &SketchSequence) -> Result<(Var, Var)> {
    let pyramid = encode(g, &model.store, &model.encoder, photo)?;
    let padded = pad_and_mask(sketch, sketch.len())?;
    let un = unroll_teacher_forced(g, model, &pyramid, &padded)?;
    accumulate_vars(g, &un.alphas)
}

pub fn predict_low_res(model: &Model, photo: &PhotoSample, mode: SaliencyMode<'_>, t_max: usize) -> Result<LowResSaliency> {
    match mode {
        SaliencyMode::TeacherForced(seq) => {
            let mut g = Graph::new();
            let (mean, _) = low_res_vars(&mut g, model, photo, seq)?;
            let (_, h, w) = g.value(mean).dims3();
            let mean = g.value(mean).data().to_vec();
            let (values, degenerate) = normalize_max(&mean);
            Ok(LowResSaliency {
                height: h,
                width: w,
                mean,
                values,
                steps: seq.len(),
                degenerate,
            })
        }
        SaliencyMode::FreeRunning(opts) => {
            // deterministic stream so repeated calls agree even when sampling
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
            let gen = generate(model, photo, &mut rng, opts, t_max)?;
            let mask = vec![1.0; gen.maps.len()];
            accumulate(&gen.maps, &mask)
        }
    }
}

/// Encode, decode, accumulate and upsample to the photo's size.
pub fn predict_saliency(model: &Model, photo: &PhotoSample, mode: SaliencyMode<'_>, t_max: usize) -> Result<SaliencyMap> {
    let low = predict_low_res(model, photo, mode, t_max)?;
    Ok(upsample(&low, photo.height(), photo.width()))
}

/// Warp of an `h x w` grid covering the transform's canvas.
pub fn grid_warp(h: usize, w: usize, t: &crate::sketch_vector::AffineTransform) -> Rc<SpatialMap> {
    Rc::new(SpatialMap::affine_warp(h, w, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: Vec<f64>) -> AttentionMap {
        AttentionMap {
            step: 0,
            height: 2,
            width: 2,
            weights: w,
        }
    }

    #[test]
    fn two_map_example() {
        let s = accumulate(&[map(vec![0.25; 4]), map(vec![1.0, 0.0, 0.0, 0.0])], &[1.0, 1.0]).unwrap();
        assert_eq!(s.mean, vec![0.625, 0.125, 0.125, 0.125]);
        assert_eq!(s.values, vec![1.0, 0.2, 0.2, 0.2]);
    }

    #[test]
    fn single_and_repeated_maps() {
        let a = map(vec![0.1, 0.2, 0.3, 0.4]);
        let one = accumulate(&[a.clone()], &[1.0]).unwrap();
        for (x, y) in one.values.iter().zip([0.25, 0.5, 0.75, 1.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        let many = accumulate(&vec![a.clone(); 5], &[1.0; 5]).unwrap();
        for (x, y) in many.values.iter().zip(&one.values) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_and_empty() {
        let a = map(vec![0.1, 0.2, 0.3, 0.4]);
        let b = map(vec![1.0, 0.0, 0.0, 0.0]);
        let s = accumulate(&[a.clone(), b], &[1.0, 0.0]).unwrap();
        assert_eq!(s.steps, 1);
        assert!(matches!(accumulate(&[a], &[0.0]), Err(Error::EmptyAccumulation)));
        let z = accumulate(&[map(vec![0.0; 4])], &[1.0]).unwrap();
        assert!(z.degenerate && z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_examples() {
        let s = LowResSaliency {
            height: 2,
            width: 2,
            mean: vec![0.25; 4],
            values: vec![1.0, 0.0, 0.0, 0.0],
            steps: 1,
            degenerate: false,
        };
        let up = upsample(&s, 4, 4);
        let w = [1.0, 0.75, 0.25, 0.0];
        for y in 0..4 {
            for x in 0..4 {
                assert!((up.values[y * 4 + x] - w[y] * w[x]).abs() < 1e-12);
            }
        }
        let same = upsample(&s, 2, 2);
        assert_eq!(same.values, s.values);
    }
}
