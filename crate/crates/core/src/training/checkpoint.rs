//! Binary checkpoint of a [`Trainer`], little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "IACNCKPT"
//! version  u32      1
//! config   u32 length + UTF-8 `key = value` text
//! step     u64      optimizer steps taken
//! count    u32      number of tensors
//! tensor   u32 name length + UTF-8 name, u8 dtype (0 = f64, 1 = u64),
//!          u64 element count, elements
//! ```
//!
//! Tensors cover every parameter, both Adam moments, the item-to-category
//! map, the vocabulary sizes and the positions of the shuffle and
//! auxiliary random streams. Loading restores all of them bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::math::Rng;

use super::{JointModel, TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IACNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_U64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub step: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn rng_tensor(rng: &Rng) -> Tensor {
    let (stream, pos) = rng.position();
    Tensor::U64(vec![stream, pos as u64, (pos >> 64) as u64])
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, data) in t.model.tensors().into_iter().chain(t.moments.tensors()) {
            tensors.insert(name, Tensor::F64(data.to_vec()));
        }
        let m = &t.model;
        tensors.insert(
            "vocab.sizes".into(),
            Tensor::U64(vec![
                m.profiles.oov_index() as u64,
                m.items.item_count() as u64,
                m.categories.item_count() as u64,
            ]),
        );
        tensors.insert(
            "vocab.item_category".into(),
            Tensor::U64(m.item_category.iter().map(|&c| c as u64).collect()),
        );
        tensors.insert("rng.shuffle".into(), rng_tensor(&t.shuffle_rng));
        tensors.insert("rng.aux".into(), rng_tensor(&t.aux_rng));
        Self {
            config_text: t.config.to_kv_string(),
            step: t.optimizer.step,
            tensors,
        }
    }

    fn u64s(&self, name: &str, len: usize) -> Result<&[u64]> {
        match self.tensors.get(name) {
            Some(Tensor::U64(v)) if v.len() == len => Ok(v),
            Some(_) => Err(corrupt(format!("tensor `{name}` has the wrong type or length"))),
            None => Err(corrupt(format!("missing tensor `{name}`"))),
        }
    }

    /// Rebuilds the trainer, validating every tensor's name and length.
    pub fn into_trainer(self) -> Result<Trainer> {
        let config = TrainConfig::from_kv_str(&self.config_text)?;
        let sizes = self.u64s("vocab.sizes", 3)?;
        let [users, items, cats] = [sizes[0], sizes[1], sizes[2]].map(|x| x as usize);
        // Every size is backed by an f64 tensor that must exist, so bound them
        // by the stored data before allocating.
        let total: usize = self
            .tensors
            .values()
            .map(|t| match t {
                Tensor::F64(v) => v.len(),
                Tensor::U64(v) => v.len(),
            })
            .sum();
        if users > total || items > total || cats > total {
            return Err(corrupt("vocabulary sizes exceed the stored data"));
        }
        // Embedding widths come from the config; check them against the
        // stored tables before anything is allocated from them.
        let expect = |rows: usize, dim: usize| rows.checked_add(1).and_then(|r| r.checked_mul(dim));
        for (name, rows, dim) in [
            ("items.orig", items, config.d_orig),
            ("items.aux", items, config.d_aux),
            ("categories.orig", cats, config.d_orig),
            ("categories.aux", cats, config.d_aux),
            ("profiles", users, config.d_orig),
        ] {
            match self.tensors.get(name) {
                Some(Tensor::F64(v)) if Some(v.len()) == expect(rows, dim) => {}
                _ => return Err(corrupt(format!("tensor `{name}` does not match the config"))),
            }
        }
        let item_category: Vec<usize> = self
            .u64s("vocab.item_category", items)?
            .iter()
            .map(|&c| c as usize)
            .collect();
        let vocab = Vocabulary {
            users: vec![String::new(); users],
            items: vec![String::new(); items],
            categories: vec![String::new(); cats],
            item_category,
        };
        vocab.validate().map_err(|e| corrupt(e.to_string()))?;
        let mut throwaway = Rng::new(0);
        let model = JointModel::new(&config, &vocab, &mut throwaway)?;
        let mut trainer = Trainer::from_model(&config, model);
        trainer.optimizer.step = self.step;

        let mut seen = 0;
        let slots = trainer
            .model
            .tensors_mut()
            .into_iter()
            .chain(trainer.moments.tensors_mut());
        for (name, dst) in slots {
            match self.tensors.get(&name) {
                Some(Tensor::F64(src)) if src.len() == dst.len() => dst.copy_from_slice(src),
                Some(_) => return Err(corrupt(format!("tensor `{name}` has the wrong type or length"))),
                None => return Err(corrupt(format!("missing tensor `{name}`"))),
            }
            seen += 1;
        }
        if seen + 4 != self.tensors.len() {
            return Err(corrupt("unexpected extra tensors"));
        }
        for (name, rng) in [
            ("rng.shuffle", &mut trainer.shuffle_rng),
            ("rng.aux", &mut trainer.aux_rng),
        ] {
            let v = self.u64s(name, 3)?;
            *rng = Rng::restore(config.seed, v[0], u128::from(v[1]) | (u128::from(v[2]) << 64));
        }
        Ok(trainer)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match t {
                Tensor::F64(v) => {
                    out.push(DTYPE_F64);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                Tensor::U64(v) => {
                    out.push(DTYPE_U64);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let config_text =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("config is not UTF-8"))?;
        let step = r.u64()?;
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name =
                String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let dtype = r.take(1)?[0];
            let n = r.u64()?;
            let bytes_needed = n.checked_mul(8).filter(|&b| b <= r.remaining() as u64);
            let raw = r.take(
                bytes_needed.ok_or_else(|| corrupt(format!("tensor `{name}` overruns the file")))? as usize,
            )?;
            let words = raw.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let t = match dtype {
                DTYPE_F64 => Tensor::F64(words.map(f64::from_le_bytes).collect()),
                DTYPE_U64 => Tensor::U64(words.map(u64::from_le_bytes).collect()),
                other => return Err(corrupt(format!("unknown dtype {other}"))),
            };
            if tensors.insert(name.clone(), t).is_some() {
                return Err(corrupt(format!("duplicate tensor `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            config_text,
            step,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&crate::io::read_bytes(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
