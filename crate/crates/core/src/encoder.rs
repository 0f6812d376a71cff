//! Convolutional encoder: a three-level feature pyramid at strides 8, 16 and
//! 32, its global descriptor, and the decoder's initial state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::PhotoSample;
use crate::error::{Error, Result};
use crate::model::{Backbone, ModelConfig};
use crate::params::{uniform_init, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Pyramid level tapped after a pooling stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    /// Stride 32.
    L,
    /// Stride 16.
    Lm1,
    /// Stride 8.
    Lm2,
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub enum Stage {
    Conv(ConvLayer),
    Pool(Option<Level>),
}

#[derive(Clone, Copy, Debug)]
enum Spec {
    Conv(usize, usize),
    Pool(Option<Level>),
}

fn layout(backbone: Backbone) -> Vec<Spec> {
    use Spec::*;
    match backbone {
        Backbone::Tiny => vec![
            Conv(8, 2),
            Conv(16, 2),
            Conv(16, 1),
            Pool(Some(Level::Lm2)),
            Conv(32, 1),
            Pool(Some(Level::Lm1)),
            Conv(32, 1),
            Conv(32, 1),
            Pool(Some(Level::L)),
        ],
        Backbone::Full => vec![
            Conv(64, 1),
            Conv(64, 1),
            Pool(None),
            Conv(128, 1),
            Conv(128, 1),
            Pool(None),
            Conv(256, 1),
            Conv(256, 1),
            Conv(256, 1),
            Pool(Some(Level::Lm2)),
            Conv(512, 1),
            Conv(512, 1),
            Conv(512, 1),
            Pool(Some(Level::Lm1)),
            Conv(512, 1),
            Conv(512, 1),
            Conv(512, 1),
            Pool(Some(Level::L)),
        ],
    }
}

/// Channel counts `(c_l, c_lm1, c_lm2)` of a backbone.
pub fn pyramid_channels(backbone: Backbone) -> (usize, usize, usize) {
    let mut ch = 3;
    let (mut l, mut l1, mut l2) = (0, 0, 0);
    for s in layout(backbone) {
        match s {
            Spec::Conv(o, _) => ch = o,
            Spec::Pool(Some(Level::L)) => l = ch,
            Spec::Pool(Some(Level::Lm1)) => l1 = ch,
            Spec::Pool(Some(Level::Lm2)) => l2 = ch,
            Spec::Pool(None) => {}
        }
    }
    (l, l1, l2)
}

/// Shapes `(C, H, W)` of `(f_l, f_lm1, f_lm2)` for a square input.
pub fn pyramid_shapes(backbone: Backbone, side: usize) -> Result<[(usize, usize, usize); 3]> {
    check_side(side)?;
    let (l, l1, l2) = pyramid_channels(backbone);
    Ok([
        (l, side / 32, side / 32),
        (l1, side / 16, side / 16),
        (l2, side / 8, side / 8),
    ])
}

fn check_side(side: usize) -> Result<()> {
    if side == 0 || side % 32 != 0 {
        return Err(Error::Shape(format!("input side {side} is not divisible by 32")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub backbone: Backbone,
    pub stages: Vec<Stage>,
    /// `W_k`, `b_k`: initial hidden state projection.
    pub init_h: (ParamId, ParamId),
    /// `W_c`, `b_c`: initial cell state projection.
    pub init_c: (ParamId, ParamId),
}

pub const BACKBONE_PREFIX: &str = "encoder.conv";

impl EncoderParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut stages = Vec::new();
        let mut ch = 3;
        let mut k = 0;
        for s in layout(cfg.backbone) {
            match s {
                Spec::Conv(o, stride) => {
                    k += 1;
                    let fan_in = ch * 9;
                    let w = store.register(
                        &format!("{BACKBONE_PREFIX}{k}.w"),
                        uniform_init(rng, &[o, ch, 3, 3], fan_in, 6f64.sqrt()),
                    );
                    let b = store.register(&format!("{BACKBONE_PREFIX}{k}.b"), Tensor::zeros(&[o]));
                    stages.push(Stage::Conv(ConvLayer { w, b, stride }));
                    ch = o;
                }
                Spec::Pool(tap) => stages.push(Stage::Pool(tap)),
            }
        }
        let (dg, dh) = (ch, cfg.d_h);
        let mut proj = |name: &str| {
            let w = store.register(&format!("encoder.{name}.w"), uniform_init(rng, &[dh, dg], dg, 1.0));
            let b = store.register(&format!("encoder.{name}.b"), Tensor::zeros(&[dh]));
            (w, b)
        };
        let init_h = proj("init_h");
        let init_c = proj("init_c");
        Self {
            backbone: cfg.backbone,
            stages,
            init_h,
            init_c,
        }
    }

    pub fn global_width(&self, store: &ParamStore) -> usize {
        store.get(self.init_h.0).shape()[1]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub f_l: Var,
    pub f_lm1: Var,
    pub f_lm2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// Run the backbone on a `(3, H, W)` input node.
pub fn encode_var(g: &mut Graph, store: &ParamStore, p: &EncoderParams, x: Var) -> Result<FeaturePyramid> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] {
        return Err(Error::Shape(format!("expected a square (3, H, W) photo, got {shape:?}")));
    }
    check_side(shape[1])?;
    let mut cur = x;
    let (mut l, mut l1, mut l2) = (None, None, None);
    for s in &p.stages {
        match s {
            Stage::Conv(c) => {
                let w = g.param(store, c.w);
                let b = g.param(store, c.b);
                let y = g.conv2d(cur, w, Some(b), c.stride, 1);
                cur = g.relu(y);
            }
            Stage::Pool(tap) => {
                cur = g.max_pool2(cur);
                match tap {
                    Some(Level::L) => l = Some(cur),
                    Some(Level::Lm1) => l1 = Some(cur),
                    Some(Level::Lm2) => l2 = Some(cur),
                    None => {}
                }
            }
        }
    }
    Ok(FeaturePyramid {
        f_l: l.expect("layout taps every level"),
        f_lm1: l1.expect("layout taps every level"),
        f_lm2: l2.expect("layout taps every level"),
    })
}

pub fn encode(g: &mut Graph, store: &ParamStore, p: &EncoderParams, photo: &PhotoSample) -> Result<FeaturePyramid> {
    let x = g.constant(photo.pixels.clone());
    encode_var(g, store, p, x)
}

/// Per-channel spatial mean.
pub fn global_pool(g: &mut Graph, f_l: Var) -> Var {
    g.channel_mean(f_l)
}

/// `h0 = tanh(W_k f_g + b_k)`, `c0 = tanh(W_c f_g + b_c)`.
pub fn init_decoder_state(g: &mut Graph, store: &ParamStore, p: &EncoderParams, f_g: Var) -> DecoderState {
    let (wk, bk) = (g.param(store, p.init_h.0), g.param(store, p.init_h.1));
    let (wc, bc) = (g.param(store, p.init_c.0), g.param(store, p.init_c.1));
    let h = g.linear(wk, f_g, Some(bk));
    let c = g.linear(wc, f_g, Some(bc));
    DecoderState {
        h: g.tanh(h),
        c: g.tanh(c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn photo(side: usize) -> PhotoSample {
        let n = 3 * side * side;
        PhotoSample::new("p", Tensor::from_vec(&[3, side, side], (0..n).map(|i| ((i * 7) % 13) as f64 / 13.0).collect()))
    }

    #[test]
    fn tiny_shapes_at_64() {
        let cfg = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = EncoderParams::register(&mut store, &cfg, &mut rng);
        let mut g = Graph::new();
        let f = encode(&mut g, &store, &p, &photo(64)).unwrap();
        assert_eq!(g.value(f.f_l).shape(), &[32, 2, 2]);
        assert_eq!(g.value(f.f_lm1).shape(), &[32, 4, 4]);
        assert_eq!(g.value(f.f_lm2).shape(), &[16, 8, 8]);
    }

    #[test]
    fn full_shapes() {
        assert_eq!(
            pyramid_shapes(Backbone::Full, 256).unwrap(),
            [(512, 8, 8), (512, 16, 16), (256, 32, 32)]
        );
        let cfg = ModelConfig {
            image_side: 32,
            ..ModelConfig::full()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = EncoderParams::register(&mut store, &cfg, &mut rng);
        assert_eq!(p.stages.iter().filter(|s| matches!(s, Stage::Conv(_))).count(), 13);
        let mut g = Graph::new();
        let f = encode(&mut g, &store, &p, &photo(32)).unwrap();
        assert_eq!(g.value(f.f_l).shape(), &[512, 1, 1]);
        assert_eq!(g.value(f.f_lm1).shape(), &[512, 2, 2]);
        assert_eq!(g.value(f.f_lm2).shape(), &[256, 4, 4]);
    }

    #[test]
    fn indivisible_side_is_a_shape_error() {
        let cfg = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = EncoderParams::register(&mut store, &cfg, &mut rng);
        let mut g = Graph::new();
        assert!(matches!(encode(&mut g, &store, &p, &photo(100)), Err(Error::Shape(_))));
    }

    #[test]
    fn pooling_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[3, 2, 2], 2.0));
        let px = global_pool(&mut g, x);
        assert_eq!(g.value(px).data(), &[2.0; 3]);
        let y = g.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let py = global_pool(&mut g, y);
        assert_eq!(g.value(py).data(), &[2.5]);
    }

    #[test]
    fn zero_descriptor_gives_zero_state() {
        let cfg = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = EncoderParams::register(&mut store, &cfg, &mut rng);
        let mut g = Graph::new();
        let fg = g.constant(Tensor::zeros(&[32]));
        let s = init_decoder_state(&mut g, &store, &p, fg);
        assert!(g.value(s.h).data().iter().all(|&v| v == 0.0));
    }
}
