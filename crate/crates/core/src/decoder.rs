//! Recurrent stroke decoder with a mixture-density head.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_step, static_map};
use crate::autograd::{log_softmax, softmax, Graph, Var, LOG_SIGMA_CLAMP, RHO_LIMIT};
use crate::data::PhotoSample;
use crate::encoder::{encode, global_pool, init_decoder_state, DecoderState, FeaturePyramid};
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model, ModelConfig};
use crate::params::{uniform_init, ParamId, ParamStore};
use crate::sketch_vector::{PaddedSequence, PenState, SketchSequence, Stroke5};
use crate::tensor::Tensor;

pub const DEFAULT_TEMPERATURE: f64 = 0.4;

#[derive(Clone, Debug)]
pub struct DecoderParams {
    /// Gate weights for the input `[g; v_prev]`, order input/forget/cell/output.
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub w_y: ParamId,
    pub b_y: ParamId,
}

impl DecoderParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (dh, din, out) = (cfg.d_h, cfg.d + 5, cfg.output_width());
        let w_x = store.register("decoder.w_x", uniform_init(rng, &[4 * dh, din], din, 1.0));
        let w_h = store.register("decoder.w_h", uniform_init(rng, &[4 * dh, dh], dh, 1.0));
        let mut b = Tensor::zeros(&[4 * dh]);
        b.data_mut()[dh..2 * dh].fill(1.0);
        let b = store.register("decoder.b", b);
        let w_y = store.register("decoder.w_y", uniform_init(rng, &[out, dh], dh, 1.0));
        let b_y = store.register("decoder.b_y", Tensor::zeros(&[out]));
        Self { w_x, w_h, b, w_y, b_y }
    }
}

/// One recurrent update; returns the new state and the raw head output.
pub fn decoder_step(
    g: &mut Graph,
    store: &ParamStore,
    p: &DecoderParams,
    state: DecoderState,
    ctx: Var,
    v_prev: &Stroke5,
) -> (DecoderState, Var) {
    let dh = store.get(p.w_h).shape()[1];
    let v = g.constant(Tensor::vector(v_prev.to_array().to_vec()));
    let x = g.concat(&[ctx, v]);
    let (wx, wh, b) = (g.param(store, p.w_x), g.param(store, p.w_h), g.param(store, p.b));
    let zx = g.linear(wx, x, Some(b));
    let zh = g.linear(wh, state.h, None);
    let z = g.add(zx, zh);
    let gate = |g: &mut Graph, k: usize| g.slice(z, k * dh, dh);
    let (zi, zf, zg, zo) = (gate(g, 0), gate(g, 1), gate(g, 2), gate(g, 3));
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, state.c);
    let write = g.mul(i, cand);
    let c = g.add(keep, write);
    let tc = g.tanh(c);
    let h = g.mul(o, tc);
    let (wy, by) = (g.param(store, p.w_y), g.param(store, p.b_y));
    let y = g.linear(wy, h, Some(by));
    (DecoderState { h, c }, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub pi: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub rho: Vec<f64>,
}

impl GmmParams {
    pub fn m(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m == 0 {
            return Err(Error::InvalidParams("no components".into()));
        }
        for v in [&self.mu_x, &self.mu_y, &self.sigma_x, &self.sigma_y, &self.rho] {
            if v.len() != m {
                return Err(Error::InvalidParams("component arrays differ in length".into()));
            }
        }
        let s: f64 = self.pi.iter().sum();
        if self.pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParams(format!("weights must form a simplex (sum {s})")));
        }
        if self.sigma_x.iter().chain(&self.sigma_y).any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParams("scales must be positive".into()));
        }
        if self.rho.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::InvalidParams("correlations must lie in (-1, 1)".into()));
        }
        if self.mu_x.iter().chain(&self.mu_y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite mean".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenLogits(pub [f64; 3]);

/// Activate a raw `6M + 3` head output.
pub fn split_output(y: &[f64], m: usize) -> Result<(GmmParams, PenLogits)> {
    if y.len() != 6 * m + 3 {
        return Err(Error::Shape(format!("head output has {} entries, expected {}", y.len(), 6 * m + 3)));
    }
    let part = |k: usize| &y[k * m..(k + 1) * m];
    let sigma = |v: &[f64]| v.iter().map(|s| s.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP).exp()).collect();
    let gmm = GmmParams {
        pi: softmax(part(0)),
        mu_x: part(1).to_vec(),
        mu_y: part(2).to_vec(),
        sigma_x: sigma(part(3)),
        sigma_y: sigma(part(4)),
        rho: part(5).iter().map(|r| r.tanh().clamp(-RHO_LIMIT, RHO_LIMIT)).collect(),
    };
    Ok((gmm, PenLogits([y[6 * m], y[6 * m + 1], y[6 * m + 2]])))
}

/// Log density of a mixture of bivariate normals (log-sum-exp over components).
pub fn gmm_log_density(dx: f64, dy: f64, g: &GmmParams) -> Result<f64> {
    g.validate()?;
    let terms: Vec<f64> = (0..g.m())
        .map(|j| {
            let (sx, sy, r) = (g.sigma_x[j], g.sigma_y[j], g.rho[j]);
            let nx = (dx - g.mu_x[j]) / sx;
            let ny = (dy - g.mu_y[j]) / sy;
            let om = 1.0 - r * r;
            let z = nx * nx + ny * ny - 2.0 * r * nx * ny;
            g.pi[j].ln() - (2.0 * std::f64::consts::PI * sx * sy * om.sqrt()).ln() - z / (2.0 * om)
        })
        .collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Ok(mx);
    }
    Ok(mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub temperature: f64,
    /// Take the most likely component's mean and the most likely pen state.
    pub greedy: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            greedy: false,
        }
    }
}

impl SampleOptions {
    pub fn greedy() -> Self {
        Self {
            temperature: 1.0,
            greedy: true,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_pen<R: Rng + ?Sized>(logits: &[f64], rng: &mut R, opts: SampleOptions) -> PenState {
    if opts.greedy {
        return PenState::from_index(argmax(logits));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / opts.temperature).collect();
    let p = softmax(&scaled);
    PenState::from_index(WeightedIndex::new(&p).map(|d| d.sample(rng)).unwrap_or_else(|_| argmax(&p)))
}

/// Draw one stroke-5 point from a raw mixture head output.
pub fn sample_step<R: Rng + ?Sized>(y: &[f64], m: usize, rng: &mut R, opts: SampleOptions) -> Result<Stroke5> {
    if !(opts.temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let (gmm, pen) = split_output(y, m)?;
    let state = sample_pen(&pen.0, rng, opts);
    if opts.greedy {
        let j = argmax(&gmm.pi);
        return Ok(Stroke5::new(gmm.mu_x[j], gmm.mu_y[j], state));
    }
    let logits: Vec<f64> = log_softmax(&y[..m]).iter().map(|l| l / opts.temperature).collect();
    let w = softmax(&logits);
    let j = WeightedIndex::new(&w).map(|d| d.sample(rng)).unwrap_or_else(|_| argmax(&w));
    let k = opts.temperature.sqrt();
    let (sx, sy, r) = (gmm.sigma_x[j] * k, gmm.sigma_y[j] * k, gmm.rho[j]);
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let dx = gmm.mu_x[j] + sx * z1;
    let dy = gmm.mu_y[j] + sy * (r * z1 + (1.0 - r * r).sqrt() * z2);
    Ok(Stroke5::new(dx, dy, state))
}

fn sample_any<R: Rng + ?Sized>(cfg: &ModelConfig, y: &[f64], rng: &mut R, opts: SampleOptions) -> Result<Stroke5> {
    let mut p = match cfg.head {
        HeadKind::Gmm => sample_step(y, cfg.m, rng, opts)?,
        HeadKind::L1 => Stroke5::new(y[0], y[1], sample_pen(&y[2..5], rng, opts)),
    };
    if !cfg.pen_state {
        p.pen = PenState::Down.one_hot();
    }
    Ok(p)
}

/// Teacher-forced decoding record. Only the valid steps are evaluated; the
/// padded tail has mask zero and produces no outputs.
#[derive(Clone, Debug)]
pub struct Unroll {
    pub ys: Vec<Var>,
    /// `(1, h, w)` attention map of each evaluated step.
    pub alphas: Vec<Var>,
    pub mask: Vec<f64>,
}

impl Unroll {
    pub fn valid_steps(&self) -> usize {
        self.ys.len()
    }
}

/// Decode with the ground-truth previous point as input (start token first).
pub fn unroll_teacher_forced(
    g: &mut Graph,
    model: &Model,
    pyramid: &FeaturePyramid,
    gt: &PaddedSequence,
) -> Result<Unroll> {
    let store = &model.store;
    let fg = global_pool(g, pyramid.f_l);
    let mut state = init_decoder_state(g, store, &model.encoder, fg);
    let static_b = static_map(g, store, &model.attention, pyramid)?;
    let mut ys = Vec::with_capacity(gt.length);
    let mut alphas = Vec::with_capacity(gt.length);
    let mut v_prev = Stroke5::START;
    for t in 0..gt.length {
        let (alpha, ctx) = attention_step(g, store, &model.attention, static_b, state.h);
        let (s, y) = decoder_step(g, store, &model.decoder, state, ctx, &v_prev);
        state = s;
        ys.push(y);
        alphas.push(alpha);
        v_prev = gt.points[t];
    }
    Ok(Unroll {
        ys,
        alphas,
        mask: gt.mask.clone(),
    })
}

/// One step's attention weights over the `h x w` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub step: usize,
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub sketch: SketchSequence,
    pub maps: Vec<AttentionMap>,
}

/// Free-running decoding: each sampled point is fed back. Stops after the
/// first end-of-drawing point or after `t_max` steps; a sequence cut at
/// `t_max` gets its last pen state replaced by end-of-drawing.
pub fn generate<R: Rng + ?Sized>(
    model: &Model,
    photo: &PhotoSample,
    rng: &mut R,
    opts: SampleOptions,
    t_max: usize,
) -> Result<Generated> {
    if t_max == 0 {
        return Err(Error::Config("t_max must be positive".into()));
    }
    let store = &model.store;
    let mut g = Graph::new();
    let pyramid = encode(&mut g, store, &model.encoder, photo)?;
    let fg = global_pool(&mut g, pyramid.f_l);
    let mut state = init_decoder_state(&mut g, store, &model.encoder, fg);
    let static_b = static_map(&mut g, store, &model.attention, &pyramid)?;
    let (_, gh, gw) = g.value(static_b).dims3();
    let mut v_prev = Stroke5::START;
    let mut points = Vec::new();
    let mut maps = Vec::new();
    for t in 0..t_max {
        let (alpha, ctx) = attention_step(&mut g, store, &model.attention, static_b, state.h);
        let (s, y) = decoder_step(&mut g, store, &model.decoder, state, ctx, &v_prev);
        state = s;
        maps.push(AttentionMap {
            step: t,
            height: gh,
            width: gw,
            weights: g.value(alpha).data().to_vec(),
        });
        let p = sample_any(&model.config, g.value(y).data(), rng, opts)?;
        points.push(p);
        if p.pen_state() == PenState::End {
            break;
        }
        v_prev = p;
    }
    if let Some(last) = points.last_mut() {
        last.pen = PenState::End.one_hot();
    }
    Ok(Generated {
        sketch: SketchSequence {
            points,
            canvas: photo.canvas(),
            scale_factor: model.scale_factor,
        },
        maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_output() {
        let (g, pen) = split_output(&[0.0; 15], 2).unwrap();
        assert_eq!(g.pi, vec![0.5, 0.5]);
        assert_eq!(g.sigma_x, vec![1.0, 1.0]);
        assert_eq!(g.rho, vec![0.0, 0.0]);
        assert_eq!(pen.0, [0.0; 3]);
        assert!(matches!(split_output(&[0.0; 14], 2), Err(Error::Shape(_))));
    }

    #[test]
    fn extreme_raw_values_stay_valid() {
        let mut y = vec![0.0; 6 * 3 + 3];
        for (i, v) in y.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 50.0 } else { -50.0 };
        }
        let (g, _) = split_output(&y, 3).unwrap();
        g.validate().unwrap();
    }

    #[test]
    fn standard_normal_at_mean() {
        let (g, _) = split_output(&[0.0; 9], 1).unwrap();
        let v = gmm_log_density(0.0, 0.0, &g).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_takes_modes() {
        let m = 2;
        let mut y = vec![0.0; 6 * m + 3];
        y[1] = 3.0; // second component dominates
        y[m + 1] = 0.7;
        y[2 * m + 1] = -0.4;
        y[6 * m + 1] = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_step(&y, m, &mut rng, SampleOptions::greedy()).unwrap();
        assert_eq!(p, Stroke5::new(0.7, -0.4, PenState::Lift));
    }

    #[test]
    fn zero_weights_output_bias() {
        let cfg = ModelConfig {
            d_h: 4,
            d: 3,
            m: 2,
            ..ModelConfig::tiny()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = DecoderParams::register(&mut store, &cfg, &mut rng);
        *store.get_mut(p.w_y) = Tensor::zeros(&[15, 4]);
        *store.get_mut(p.b_y) = Tensor::vector((0..15).map(|v| v as f64).collect());
        let mut g = Graph::new();
        let state = DecoderState {
            h: g.constant(Tensor::full(&[4], 0.3)),
            c: g.constant(Tensor::full(&[4], -0.1)),
        };
        let ctx = g.constant(Tensor::full(&[3], 1.0));
        let (_, y) = decoder_step(&mut g, &store, &p, state, ctx, &Stroke5::START);
        assert_eq!(g.value(y).data(), store.get(p.b_y).data());
    }
}
