mod common;

use std::rc::Rc;

use rand::Rng;

use common::{grad_check, random_photo, random_sketch, rng, small_model};
use s2s_core::autograd::{Graph, Var};
use s2s_core::data::PhotoSample;
use s2s_core::decoder::unroll_teacher_forced;
use s2s_core::encoder::encode;
use s2s_core::losses::{equivariance_var, sequence_loss};
use s2s_core::model::Model;
use s2s_core::saliency::{accumulate_vars, low_res_vars};
use s2s_core::sketch_vector::{AffineTransform, Canvas, SketchSequence};

const TOL: f64 = 1e-4;

fn seq_loss(model: &Model, photo: &PhotoSample, sketch: &SketchSequence, coord: bool) -> (Graph, Var) {
    let mut g = Graph::new();
    let pyr = encode(&mut g, &model.store, &model.encoder, photo).unwrap();
    let padded = s2s_core::sketch_vector::pad_and_mask(sketch, sketch.len()).unwrap();
    let un = unroll_teacher_forced(&mut g, model, &pyr, &padded).unwrap();
    let l = sequence_loss(&mut g, model, &un, sketch).unwrap();
    let v = if coord { l.coord.unwrap() } else { l.stroke };
    (g, v)
}

fn eqv_loss(model: &Model, photo: &PhotoSample, sketch: &SketchSequence, t: &AffineTransform) -> (Graph, Var) {
    let mut g = Graph::new();
    let pyr = encode(&mut g, &model.store, &model.encoder, photo).unwrap();
    let padded = s2s_core::sketch_vector::pad_and_mask(sketch, sketch.len()).unwrap();
    let un = unroll_teacher_forced(&mut g, model, &pyr, &padded).unwrap();
    let (_, s) = accumulate_vars(&mut g, &un.alphas).unwrap();
    let v = equivariance_var(&mut g, model, photo, sketch, s, t).unwrap();
    (g, v)
}

fn saliency_probe(model: &Model, photo: &PhotoSample, sketch: &SketchSequence, weights: &Rc<Vec<f64>>) -> (Graph, Var) {
    let mut g = Graph::new();
    let (_, s) = low_res_vars(&mut g, model, photo, sketch).unwrap();
    let v = g.dot_const(s, weights.clone());
    (g, v)
}

#[test]
fn sequence_losses_match_finite_differences() {
    for draw in 0..4 {
        let mut r = rng(100 + draw);
        let mut model = small_model(32, 8, 2, draw);
        let photo = random_photo(&mut r, 32);
        let sketch = random_sketch(&mut r, 3, 32, 8.0);
        for coord in [true, false] {
            let c = grad_check(&mut model, 2, &mut r, |m| seq_loss(m, &photo, &sketch, coord));
            assert!(c.max_rel < TOL && c.skipped * 5 < c.checked, "coord={coord} draw {draw}: {c:?}");
        }
    }
}

#[test]
fn equivariance_and_saliency_match_finite_differences() {
    for draw in 0..2 {
        let mut r = rng(200 + draw);
        let mut model = small_model(64, 8, 2, draw);
        let photo = random_photo(&mut r, 64);
        let sketch = random_sketch(&mut r, 3, 64, 8.0);
        let t = AffineTransform::rotate(Canvas::square(64), r.random_range(-20.0..20.0));
        let c = grad_check(&mut model, 2, &mut r, |m| eqv_loss(m, &photo, &sketch, &t));
        assert!(c.max_rel < TOL && c.skipped * 5 < c.checked, "eqv draw {draw}: {c:?}");
        let w = Rc::new((0..4).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let c = grad_check(&mut model, 2, &mut r, |m| saliency_probe(m, &photo, &sketch, &w));
        assert!(c.max_rel < TOL && c.skipped * 5 < c.checked, "saliency draw {draw}: {c:?}");
    }
}

#[test]
fn pyramid_sum_matches_finite_differences() {
    let mut r = rng(7);
    let mut model = small_model(32, 8, 2, 3);
    let photo = random_photo(&mut r, 32);
    let c = grad_check(&mut model, 3, &mut r, |m| {
        let mut g = Graph::new();
        let p = encode(&mut g, &m.store, &m.encoder, &photo).unwrap();
        let parts: Vec<Var> = [p.f_l, p.f_lm1, p.f_lm2].iter().map(|&v| g.sum(v)).collect();
        let all = g.concat(&parts);
        let s = g.sum(all);
        (g, s)
    });
    assert!(c.max_rel < TOL && c.skipped * 5 < c.checked, "{c:?}");
}
