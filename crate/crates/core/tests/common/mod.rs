#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s2s_core::autograd::{Graph, Var};
use s2s_core::data::PhotoSample;
use s2s_core::decoder::GmmParams;
use s2s_core::model::{Model, ModelConfig};
use s2s_core::params::ParamGrads;
use s2s_core::sketch_vector::{absolute_to_offsets, AbsPoint, Canvas, SketchSequence};
use s2s_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_model(side: usize, d_h: usize, m: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        image_side: side,
        d_h,
        d: 8,
        m,
        ..ModelConfig::tiny()
    };
    let mut r = rng(seed);
    let mut model = Model::new(cfg, &mut r).unwrap();
    // zero biases put constant image regions exactly on the ReLU kink
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.name(id).ends_with(".b")).collect();
    for id in ids {
        for v in model.store.get_mut(id).data_mut() {
            *v = r.random_range(-0.2..0.2);
        }
    }
    model
}

pub fn random_photo<R: Rng>(rng: &mut R, side: usize) -> PhotoSample {
    let px = (0..3 * side * side).map(|_| rng.random::<f64>()).collect();
    PhotoSample::new("p", Tensor::from_vec(&[3, side, side], px))
}

/// Random polyline drawing of `n` points in a `side` canvas, split into strokes.
pub fn random_points<R: Rng>(rng: &mut R, n: usize, side: usize) -> Vec<AbsPoint> {
    let s = side as f64;
    (0..n)
        .map(|i| AbsPoint::new(rng.random_range(0.0..s - 1.0), rng.random_range(0.0..s - 1.0), i == 0 || rng.random_bool(0.2)))
        .collect()
}

pub fn random_sketch<R: Rng>(rng: &mut R, n: usize, side: usize, scale: f64) -> SketchSequence {
    absolute_to_offsets(&random_points(rng, n, side), Canvas::square(side), scale).unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
    /// Entries redrawn because the loss is not smooth within the stencil.
    pub skipped: usize,
    pub groups: usize,
}

/// Relative error with a floor on the denominator so that gradients that
/// are zero up to round-off compare by absolute difference.
pub fn rel_err(a: f64, n: f64) -> f64 {
    rel_err_floor(a, n, 1e-6)
}

pub fn rel_err_floor(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare analytic parameter gradients of the scalar built by `f` with
/// fourth-order central differences at `per_group` random entries of every
/// trainable tensor. An entry whose difference quotients at `h` and `h / 4`
/// disagree sits next to a ReLU or max-pool switch and is redrawn.
pub fn grad_check<R: Rng>(model: &mut Model, per_group: usize, rng: &mut R, f: impl Fn(&Model) -> (Graph, Var)) -> GradCheck {
    let (g, root) = f(model);
    let grads = g.backward(root);
    let mut acc = ParamGrads::zeros_like(&model.store);
    g.accumulate_param_grads(&grads, &mut acc, 1.0);
    let (coarse_h, fine_h) = (1e-5, 2.5e-6);
    // round-off of the fine quotient
    let scale = g.value(root).item().abs().max(1.0);
    let noise = 8.0 * f64::EPSILON * scale / fine_h;
    // gradients below this are compared by absolute difference
    let floor = (1e4 * 8.0 * f64::EPSILON * scale / coarse_h).max(1e-6);
    let mut out = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
        skipped: 0,
        groups: 0,
    };
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.is_trainable(id)).collect();
    for id in ids {
        out.groups += 1;
        let len = model.store.get(id).len();
        let mut done = 0;
        let mut tries = 0;
        while done < per_group.min(len) && tries < 10 * per_group {
            tries += 1;
            let k = rng.random_range(0..len);
            let orig = model.store.get(id).data()[k];
            let mut at = |x: f64| {
                model.store.get_mut(id).data_mut()[k] = x;
                let (g, r) = f(model);
                g.value(r).item()
            };
            let mut stencil = |h: f64| {
                (-at(orig + 2.0 * h) + 8.0 * at(orig + h) - 8.0 * at(orig - h) + at(orig - 2.0 * h)) / (12.0 * h)
            };
            let coarse = stencil(coarse_h);
            let fine = stencil(fine_h);
            model.store.get_mut(id).data_mut()[k] = orig;
            if (coarse - fine).abs() > 1e-5 * coarse.abs().max(fine.abs()) + noise {
                out.skipped += 1;
                continue;
            }
            done += 1;
            let ana = acc.get(id).data()[k];
            let e = rel_err_floor(ana, coarse, floor);
            out.checked += 1;
            if e > out.max_rel {
                out.max_rel = e;
                out.worst = format!("{}[{k}]: analytic {ana:e}, numeric {coarse:e}", model.store.name(id));
            }
        }
    }
    out
}

/// Mixture density by direct summation with explicit covariance matrices.
pub fn gmm_density_brute(dx: f64, dy: f64, g: &GmmParams) -> f64 {
    let mut p = 0.0;
    for j in 0..g.pi.len() {
        let (sx, sy) = (g.sigma_x[j], g.sigma_y[j]);
        let c = g.rho[j] * sx * sy;
        let cov = [[sx * sx, c], [c, sy * sy]];
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
        let d = [dx - g.mu_x[j], dy - g.mu_y[j]];
        let mut q = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                q += d[a] * inv[a][b] * d[b];
            }
        }
        p += g.pi[j] * (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
    }
    p
}

pub fn random_gmm<R: Rng>(rng: &mut R, m: usize) -> GmmParams {
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    GmmParams {
        pi: w.iter().map(|v| v / s).collect(),
        mu_x: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        mu_y: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        sigma_x: (0..m).map(|_| rng.random_range(0.2..3.0)).collect(),
        sigma_y: (0..m).map(|_| rng.random_range(0.2..3.0)).collect(),
        rho: (0..m).map(|_| rng.random_range(-0.9..0.9)).collect(),
    }
}

/// Best F-beta over every binarization `pred >= v` for the distinct values `v`.
pub fn max_fbeta_exhaustive(pred: &[f64], gt: &[u8], beta_sq: f64) -> f64 {
    let mut vals: Vec<f64> = pred.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let pos = gt.iter().filter(|&&g| g != 0).count() as f64;
    let mut best: f64 = 0.0;
    for v in vals {
        let tp = pred.iter().zip(gt).filter(|(&p, &g)| p >= v && g != 0).count() as f64;
        let pp = pred.iter().filter(|&&p| p >= v).count() as f64;
        let (p, r) = (tp / pp, tp / pos);
        if p + r > 0.0 {
            best = best.max((1.0 + beta_sq) * p * r / (beta_sq * p + r));
        }
    }
    best
}

/// Weighted F-beta written step by step after the reference MATLAB routine:
/// nearest-foreground transform over all pixels, 7x7 sigma-5 Gaussian with
/// zero padding, distance-based background weights.
pub fn weighted_fbeta_oracle(pred: &[f64], gt: &[u8], h: usize, w: usize, beta_sq: f64) -> f64 {
    let eps = f64::EPSILON;
    let n = h * w;
    let fg: Vec<bool> = gt.iter().map(|&g| g != 0).collect();
    let e: Vec<f64> = (0..n).map(|i| (pred[i] - if fg[i] { 1.0 } else { 0.0 }).abs()).collect();
    let mut dst = vec![0.0; n];
    let mut idxt: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if fg[i] {
            continue;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if !fg[j] {
                continue;
            }
            let d = (((i / w) as f64 - (j / w) as f64).powi(2) + ((i % w) as f64 - (j % w) as f64).powi(2)).sqrt();
            if d < best.0 {
                best = (d, j);
            }
        }
        dst[i] = best.0;
        idxt[i] = best.1;
    }
    let et: Vec<f64> = (0..n).map(|i| e[idxt[i]]).collect();
    let mut kern = vec![vec![0.0; 7]; 7];
    let mut ks = 0.0;
    for (a, row) in kern.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (y, x) = (a as f64 - 3.0, b as f64 - 3.0);
            *v = (-(x * x + y * y) / 50.0).exp();
            ks += *v;
        }
    }
    let mut ea = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for a in -3..=3isize {
                for b in -3..=3isize {
                    let (yy, xx) = (y + a, x + b);
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        s += kern[(a + 3) as usize][(b + 3) as usize] / ks * et[yy as usize * w + xx as usize];
                    }
                }
            }
            ea[y as usize * w + x as usize] = s;
        }
    }
    let min_e_ea: Vec<f64> = (0..n).map(|i| if fg[i] && ea[i] < e[i] { ea[i] } else { e[i] }).collect();
    let b: Vec<f64> = (0..n).map(|i| if fg[i] { 1.0 } else { 2.0 - ((0.5f64).ln() / 5.0 * dst[i]).exp() }).collect();
    let ew: Vec<f64> = (0..n).map(|i| min_e_ea[i] * b[i]).collect();
    let pos = fg.iter().filter(|&&f| f).count() as f64;
    let tpw = pos - (0..n).filter(|&i| fg[i]).map(|i| ew[i]).sum::<f64>();
    let fpw: f64 = (0..n).filter(|&i| !fg[i]).map(|i| ew[i]).sum();
    let r = 1.0 - (0..n).filter(|&i| fg[i]).map(|i| ew[i]).sum::<f64>() / pos;
    let p = tpw / (eps + tpw + fpw);
    (1.0 + beta_sq) * r * p / (eps + r + beta_sq * p)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn object(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    let x = mean(vals);
    let sd = if vals.len() > 1 {
        (vals.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + sd + f64::EPSILON)
}

fn ssim_block(p: &[f64], g: &[f64]) -> f64 {
    let eps = f64::EPSILON;
    let n = p.len() as f64;
    let (x, y) = (mean(p), mean(g));
    let sx2 = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0 + eps);
    let sy2 = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / (n - 1.0 + eps);
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / (n - 1.0 + eps);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + eps)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure following the reference MATLAB routine.
pub fn s_measure_oracle(pred: &[f64], gt: &[u8], h: usize, w: usize, alpha: f64) -> f64 {
    let gtf: Vec<f64> = gt.iter().map(|&g| if g != 0 { 1.0 } else { 0.0 }).collect();
    let y = mean(&gtf);
    if y == 0.0 {
        return 1.0 - mean(pred);
    }
    if y == 1.0 {
        return mean(pred);
    }
    let fg: Vec<f64> = (0..h * w).filter(|&i| gtf[i] == 1.0).map(|i| pred[i]).collect();
    let bg: Vec<f64> = (0..h * w).filter(|&i| gtf[i] == 0.0).map(|i| 1.0 - pred[i]).collect();
    let s_obj = y * object(&fg) + (1.0 - y) * object(&bg);

    let total: f64 = gtf.iter().sum();
    let mut col_sum = vec![0.0; w];
    let mut row_sum = vec![0.0; h];
    for r in 0..h {
        for c in 0..w {
            col_sum[c] += gtf[r * w + c];
            row_sum[r] += gtf[r * w + c];
        }
    }
    let cx = (col_sum.iter().enumerate().map(|(i, s)| s * (i + 1) as f64).sum::<f64>() / total).round() as usize;
    let cy = (row_sum.iter().enumerate().map(|(j, s)| s * (j + 1) as f64).sum::<f64>() / total).round() as usize;
    let block = |r0: usize, r1: usize, c0: usize, c1: usize| -> (f64, f64) {
        if r1 <= r0 || c1 <= c0 {
            return (0.0, 0.0);
        }
        let mut p = Vec::new();
        let mut g = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pred[r * w + c]);
                g.push(gtf[r * w + c]);
            }
        }
        (((r1 - r0) * (c1 - c0)) as f64 / (h * w) as f64, ssim_block(&p, &g))
    };
    let parts = [block(0, cy, 0, cx), block(0, cy, cx, w), block(cy, h, 0, cx), block(cy, h, cx, w)];
    let s_reg: f64 = parts.iter().map(|(wt, q)| wt * q).sum();
    (alpha * s_obj + (1.0 - alpha) * s_reg).max(0.0)
}

/// Textbook recursive Douglas-Peucker with point-to-segment distance.
pub fn rdp_reference(pts: &[(f64, f64)], eps: f64) -> Vec<(f64, f64)> {
    if pts.len() < 3 {
        return pts.to_vec();
    }
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let dist = |p: (f64, f64)| {
        let (vx, vy) = (b.0 - a.0, b.1 - a.1);
        let l2 = vx * vx + vy * vy;
        let t = if l2 == 0.0 { 0.0 } else { (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / l2).clamp(0.0, 1.0) };
        ((p.0 - a.0 - t * vx).powi(2) + (p.1 - a.1 - t * vy).powi(2)).sqrt()
    };
    let mut idx = 0;
    let mut dmax = -1.0;
    for (i, &p) in pts.iter().enumerate().take(pts.len() - 1).skip(1) {
        let d = dist(p);
        if d > dmax {
            dmax = d;
            idx = i;
        }
    }
    if dmax > eps {
        let mut left = rdp_reference(&pts[..=idx], eps);
        let right = rdp_reference(&pts[idx..], eps);
        left.pop();
        left.extend(right);
        left
    } else {
        vec![a, b]
    }
}
