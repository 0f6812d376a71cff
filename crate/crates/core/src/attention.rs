//! Multi-scale 2D attention over the feature pyramid.
//!
//! Per step `t` with previous hidden state `h`:
//! `B^k = W_M^k * F^k + U h` at each scale, fused at the coarsest grid as
//! `B = B^l + down2(B^{l-1}) + down4(B^{l-2})`, scored by
//! `J = tanh(W_F B + W_B * B + W_s h)`, `alpha = softmax(w_a . J)` over all
//! positions, and summarized by `g = sum alpha B`.
//!
//! The state-independent convolution terms are computed once per photo.
//! Bilinear downscaling preserves constants, so the state term of the fused
//! map is the projected state times the number of scales.

use std::rc::Rc;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::encoder::{pyramid_channels, EncoderParams, FeaturePyramid};
use crate::error::{Error, Result};
use crate::model::{AttentionKind, ModelConfig};
use crate::params::{uniform_init, ParamId, ParamStore};
use crate::resample::SpatialMap;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub kind: AttentionKind,
    /// `W_M` kernel and bias for `F^l`, `F^{l-1}`, `F^{l-2}`; only the first
    /// is present in single-scale mode.
    pub w_m: Vec<(ParamId, ParamId)>,
    /// Projection of the state into each scale's map.
    pub u_s: ParamId,
    pub w_f: (ParamId, ParamId),
    /// Neighbourhood kernel; absent in flat mode.
    pub w_b: Option<ParamId>,
    pub w_s: ParamId,
    pub w_a: ParamId,
}

impl AttentionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        _encoder: &EncoderParams,
        rng: &mut R,
    ) -> Self {
        let (cl, cl1, cl2) = pyramid_channels(cfg.backbone);
        let (d, dh) = (cfg.d, cfg.d_h);
        let channels: &[usize] = if cfg.multiscale { &[cl, cl1, cl2] } else { &[cl] };
        let w_m = channels
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let w = store.register(&format!("attention.w_m{k}.w"), uniform_init(rng, &[d, c, 3, 3], c * 9, 1.0));
                let b = store.register(&format!("attention.w_m{k}.b"), Tensor::zeros(&[d]));
                (w, b)
            })
            .collect();
        let u_s = store.register("attention.u_s", uniform_init(rng, &[d, dh], dh, 1.0));
        let w_f = (
            store.register("attention.w_f.w", uniform_init(rng, &[d, d, 1, 1], d, 1.0)),
            store.register("attention.w_f.b", Tensor::zeros(&[d])),
        );
        let w_b = match cfg.attention {
            AttentionKind::Spatial => Some(store.register(
                "attention.w_b",
                uniform_init(rng, &[d, d, 3, 3], d * 9, 1.0),
            )),
            AttentionKind::Flat => None,
        };
        let w_s = store.register("attention.w_s", uniform_init(rng, &[d, dh], dh, 1.0));
        let w_a = store.register("attention.w_a", uniform_init(rng, &[1, d, 1, 1], d, 1.0));
        Self {
            kind: cfg.attention,
            w_m,
            u_s,
            w_f,
            w_b,
            w_s,
            w_a,
        }
    }

    pub fn n_scales(&self) -> usize {
        self.w_m.len()
    }
}

/// State-informed per-scale maps `B^k` (coarsest first).
pub fn inform_feature_maps(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttentionParams,
    pyramid: &FeaturePyramid,
    h: Var,
) -> Vec<Var> {
    let maps = [pyramid.f_l, pyramid.f_lm1, pyramid.f_lm2];
    let us = g.param(store, p.u_s);
    let proj = g.linear(us, h, None);
    p.w_m
        .iter()
        .zip(maps)
        .map(|(&(w, b), f)| {
            let (w, b) = (g.param(store, w), g.param(store, b));
            let conv = g.conv2d(f, w, Some(b), 1, 1);
            g.add_channel(conv, proj)
        })
        .collect()
}

/// `B^l + down2(B^{l-1}) + down4(B^{l-2})`; finer maps are optional.
pub fn fuse_multiscale(g: &mut Graph, b_l: Var, finer: &[Var]) -> Result<Var> {
    let (d, h, w) = g.value(b_l).dims3();
    let mut acc = b_l;
    for (i, &b) in finer.iter().enumerate() {
        let k = 2usize << i;
        let (dd, hh, ww) = g.value(b).dims3();
        if dd != d || hh != k * h || ww != k * w {
            return Err(Error::Shape(format!(
                "scale {} map is {dd}x{hh}x{ww}, expected {d}x{}x{}",
                i + 1,
                k * h,
                k * w
            )));
        }
        let map = Rc::new(SpatialMap::bilinear(hh, ww, h, w));
        let down = g.resample(b, map);
        acc = g.add(acc, down);
    }
    Ok(acc)
}

/// Fused state-independent part of `B`, computed once per photo.
pub fn static_map(g: &mut Graph, store: &ParamStore, p: &AttentionParams, pyramid: &FeaturePyramid) -> Result<Var> {
    let maps = [pyramid.f_l, pyramid.f_lm1, pyramid.f_lm2];
    let convs: Vec<Var> = p
        .w_m
        .iter()
        .zip(maps)
        .map(|(&(w, b), f)| {
            let (w, b) = (g.param(store, w), g.param(store, b));
            g.conv2d(f, w, Some(b), 1, 1)
        })
        .collect();
    fuse_multiscale(g, convs[0], &convs[1..])
}

/// Attention map `(1, h, w)` and context vector for a fused map `B`.
pub fn attend(g: &mut Graph, store: &ParamStore, p: &AttentionParams, b: Var, h: Var) -> (Var, Var) {
    let (wf, bf) = (g.param(store, p.w_f.0), g.param(store, p.w_f.1));
    let mut pre = g.conv2d(b, wf, Some(bf), 1, 0);
    if let Some(wb) = p.w_b {
        let wb = g.param(store, wb);
        let nb = g.conv2d(b, wb, None, 1, 1);
        pre = g.add(pre, nb);
    }
    let ws = g.param(store, p.w_s);
    let sh = g.linear(ws, h, None);
    let pre = g.add_channel(pre, sh);
    let j = g.tanh(pre);
    let wa = g.param(store, p.w_a);
    let logits = g.conv2d(j, wa, None, 1, 0);
    let alpha = g.softmax(logits);
    let ctx = g.weighted_sum(alpha, b);
    (alpha, ctx)
}

/// One attention step from the cached static map.
pub fn attention_step(g: &mut Graph, store: &ParamStore, p: &AttentionParams, static_b: Var, h: Var) -> (Var, Var) {
    let us = g.param(store, p.u_s);
    let proj = g.linear(us, h, None);
    let proj = g.scale(proj, p.n_scales() as f64);
    let b = g.add_channel(static_b, proj);
    attend(g, store, p, b, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &ModelConfig) -> (ParamStore, AttentionParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let e = EncoderParams::register(&mut store, cfg, &mut rng);
        let a = AttentionParams::register(&mut store, cfg, &e, &mut rng);
        (store, a)
    }

    #[test]
    fn zero_state_leaves_convolution() {
        let cfg = ModelConfig::tiny();
        let (store, p) = setup(&cfg);
        let mut g = Graph::new();
        let f_l = g.constant(Tensor::from_vec(&[32, 2, 2], (0..128).map(|v| (v as f64 * 0.1).sin()).collect()));
        let f_lm1 = g.constant(Tensor::full(&[32, 4, 4], 0.3));
        let f_lm2 = g.constant(Tensor::full(&[16, 8, 8], -0.2));
        let pyr = FeaturePyramid { f_l, f_lm1, f_lm2 };
        let h = g.constant(Tensor::zeros(&[64]));
        let maps = inform_feature_maps(&mut g, &store, &p, &pyr, h);
        let w = g.param(&store, p.w_m[0].0);
        let b = g.param(&store, p.w_m[0].1);
        let direct = g.conv2d(f_l, w, Some(b), 1, 1);
        assert_eq!(g.value(maps[0]), g.value(direct));
    }

    #[test]
    fn zero_pyramid_broadcasts_state() {
        let cfg = ModelConfig::tiny();
        let (store, p) = setup(&cfg);
        let mut g = Graph::new();
        let pyr = FeaturePyramid {
            f_l: g.constant(Tensor::zeros(&[32, 2, 2])),
            f_lm1: g.constant(Tensor::zeros(&[32, 4, 4])),
            f_lm2: g.constant(Tensor::zeros(&[16, 8, 8])),
        };
        let h = g.constant(Tensor::from_vec(&[64], (0..64).map(|v| (v as f64).cos()).collect()));
        let maps = inform_feature_maps(&mut g, &store, &p, &pyr, h);
        let us = g.param(&store, p.u_s);
        let proj = g.linear(us, h, None);
        let proj = g.value(proj).data().to_vec();
        for m in maps {
            let (d, hh, ww) = g.value(m).dims3();
            for c in 0..d {
                for i in 0..hh * ww {
                    assert_eq!(g.value(m).data()[c * hh * ww + i], proj[c]);
                }
            }
        }
    }

    #[test]
    fn fuse_checks_ratio_and_constants() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[2, 2, 2], 1.0));
        let b = g.constant(Tensor::full(&[2, 4, 4], 2.0));
        let c = g.constant(Tensor::full(&[2, 8, 8], 3.0));
        let f = fuse_multiscale(&mut g, a, &[b, c]).unwrap();
        assert!(g.value(f).data().iter().all(|&v| (v - 6.0).abs() < 1e-15));
        let bad = g.constant(Tensor::full(&[2, 6, 6], 2.0));
        assert!(matches!(fuse_multiscale(&mut g, a, &[bad]), Err(Error::Shape(_))));
        let z1 = g.constant(Tensor::zeros(&[2, 4, 4]));
        let z2 = g.constant(Tensor::zeros(&[2, 8, 8]));
        let f = fuse_multiscale(&mut g, a, &[z1, z2]).unwrap();
        assert_eq!(g.value(f), g.value(a));
    }

    #[test]
    fn zero_scoring_weights_give_uniform_attention() {
        let cfg = ModelConfig::tiny();
        let (mut store, p) = setup(&cfg);
        *store.get_mut(p.w_a) = Tensor::zeros(&[1, 32, 1, 1]);
        let mut g = Graph::new();
        let b = g.constant(Tensor::from_vec(&[32, 2, 2], (0..128).map(|v| v as f64).collect()));
        let h = g.constant(Tensor::full(&[64], 0.5));
        let (alpha, ctx) = attend(&mut g, &store, &p, b, h);
        assert!(g.value(alpha).data().iter().all(|&a| a == 0.25));
        for c in 0..32 {
            let mean = (0..4).map(|i| (c * 4 + i) as f64).sum::<f64>() / 4.0;
            assert!((g.value(ctx).data()[c] - mean).abs() < 1e-12);
        }
    }
}
