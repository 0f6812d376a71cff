use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"S2SCKPT1";

/// Everything needed to resume training exactly.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    scale_factor: f64,
    rng: ChaCha8Rng,
    optimizer: Option<Adam>,
    params: Vec<ParamEntry>,
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("archive is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Tensor::from_vec(shape, data))
    }
}

impl Checkpoint {
    pub fn fingerprint(&self) -> String {
        self.model.config.fingerprint()
    }

    /// Magic, little-endian header length, JSON header, then raw
    /// little-endian f64 values: parameters, then Adam moments.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.model.store;
        let header = Header {
            fingerprint: self.fingerprint(),
            model: self.model.config.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            scale_factor: self.model.scale_factor,
            rng: self.rng.clone(),
            optimizer: self.optimizer.clone(),
            params: store
                .ids()
                .map(|id| ParamEntry {
                    name: store.name(id).to_string(),
                    shape: store.get(id).shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + store.num_values() * 24);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for id in store.ids() {
            push_tensor(&mut out, store.get(id));
        }
        if let Some(opt) = &self.optimizer {
            for t in opt.m.iter().chain(&opt.v) {
                push_tensor(&mut out, t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint archive".into()));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.model.fingerprint() != header.fingerprint {
            return Err(Error::Checkpoint("config fingerprint mismatch".into()));
        }
        let mut store = ParamStore::new();
        for p in &header.params {
            let t = r.tensor(&p.shape)?;
            store.register(&p.name, t);
        }
        let model = Model::with_store(header.model, &store, header.scale_factor)?;
        let optimizer = match header.optimizer {
            Some(mut opt) => {
                let shapes: Vec<Vec<usize>> = model.store.ids().map(|id| model.store.get(id).shape().to_vec()).collect();
                opt.m = shapes.iter().map(|s| r.tensor(s)).collect::<Result<_>>()?;
                opt.v = shapes.iter().map(|s| r.tensor(s)).collect::<Result<_>>()?;
                Some(opt)
            }
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after archive".into()));
        }
        Ok(Self {
            train: header.train,
            model,
            optimizer,
            epoch: header.epoch,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
