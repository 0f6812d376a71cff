//! Model configuration and the parameter set tying encoder, attention and
//! decoder together.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::decoder::DecoderParams;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Six convolutions, three pooling stages; channels 32/32/16.
    Tiny,
    /// VGG-16 layout; channels 512/512/256.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Neighbourhood-aware attention over the feature grid.
    Spatial,
    /// Positions scored independently, as an unordered set of vectors.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Mixture of bivariate normals plus pen logits (`6M + 3` outputs).
    Gmm,
    /// Direct offset regression plus pen logits (5 outputs).
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub image_side: usize,
    /// Recurrent state width.
    pub d_h: usize,
    /// Attention embedding width.
    pub d: usize,
    /// Number of mixture components.
    pub m: usize,
    pub attention: AttentionKind,
    pub multiscale: bool,
    pub pen_state: bool,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            backbone: Backbone::Tiny,
            image_side: 64,
            d_h: 64,
            d: 32,
            m: 10,
            attention: AttentionKind::Spatial,
            multiscale: true,
            pen_state: true,
            head: HeadKind::Gmm,
        }
    }

    pub fn full() -> Self {
        Self {
            backbone: Backbone::Full,
            image_side: 256,
            d_h: 512,
            d: 256,
            m: 20,
            attention: AttentionKind::Spatial,
            multiscale: true,
            pen_state: true,
            head: HeadKind::Gmm,
        }
    }

    pub fn output_width(&self) -> usize {
        match self.head {
            HeadKind::Gmm => 6 * self.m + 3,
            HeadKind::L1 => 5,
        }
    }

    /// Attention grid side.
    pub fn grid_side(&self) -> usize {
        self.image_side / 32
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 || self.image_side % 32 != 0 {
            return Err(Error::Config(format!(
                "image side {} must be a positive multiple of 32",
                self.image_side
            )));
        }
        if self.d_h == 0 || self.d == 0 || self.m == 0 {
            return Err(Error::Config("widths and mixture count must be positive".into()));
        }
        Ok(())
    }

    /// Stable identifier of the parameter layout.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub attention: AttentionParams,
    pub decoder: DecoderParams,
    /// Divisor applied to pixel offsets of every sketch this model sees.
    pub scale_factor: f64,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&mut store, &config, rng);
        let attention = AttentionParams::register(&mut store, &config, &encoder, rng);
        let decoder = DecoderParams::register(&mut store, &config, rng);
        Ok(Self {
            config,
            store,
            encoder,
            attention,
            decoder,
            scale_factor: 1.0,
        })
    }

    /// Same architecture with the given parameter values (matched by name).
    pub fn with_store(config: ModelConfig, store: &ParamStore, scale_factor: f64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut m = Self::new(config, &mut rng)?;
        for id in m.store.ids().collect::<Vec<_>>() {
            let name = m.store.name(id).to_string();
            let src = store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if store.get(src).shape() != m.store.get(id).shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
            }
            *m.store.get_mut(id) = store.get(src).clone();
        }
        if store.len() != m.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                m.store.len(),
                store.len()
            )));
        }
        m.scale_factor = scale_factor;
        Ok(m)
    }
}
