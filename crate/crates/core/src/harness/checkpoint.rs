//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DSFC" | u32 version | u32 len + config text | u64 iteration
//! u32 count + parameter records
//! u64 optimizer step | u32 count + records named adam.m/<p>, adam.v/<p>
//! u64 rng seed | u64 rng stream | u128 rng counter
//! ```
//!
//! A record is `u32 name len, name bytes, u32 rank, u32 dims.., f32 data..`.

use std::path::Path;

use super::config::Config;
use super::optim::AdamW;
use crate::denoiser::{check_params, Denoiser};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, RealArray, RngStream};

pub const MAGIC: &[u8; 4] = b"DSFC";
pub const VERSION: u32 = 1;

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: Config,
    /// Completed training iterations.
    pub iteration: u64,
    pub params: ParamStore,
    pub optimizer: AdamW,
    pub rng: RngStream,
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend((d as u32).to_le_bytes());
    }
    for x in data {
        out.extend(x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Parse {
            what: "checkpoint".into(),
            reason: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse {
            what: "checkpoint".into(),
            reason: "string is not UTF-8".into(),
        })
    }

    fn record(&mut self) -> Result<(String, RealArray)> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Parse {
            what: "checkpoint".into(),
            reason: format!("record `{name}` is too large"),
        })?;
        let bytes = self.take(len.checked_mul(4).unwrap_or(usize::MAX))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, RealArray::new(shape, data)?))
    }
}

impl Checkpoint {
    /// Fresh state at iteration 0 with weights drawn from `train.init_seed`.
    pub fn initial(config: &Config) -> Result<Self> {
        config.validate()?;
        let den = Denoiser::init(config.denoiser.clone(), config.train.init_seed)?;
        Ok(Self {
            config: config.clone(),
            iteration: 0,
            params: den.params,
            optimizer: AdamW::new(config.train.weight_decay),
            rng: RngStream::new(config.train.seed),
        })
    }

    /// The trained model; fails when the weights do not fit the stored
    /// denoiser configuration.
    pub fn denoiser(&self) -> Result<Denoiser> {
        Denoiser::new(self.config.denoiser.clone(), self.params.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend((text.len() as u32).to_le_bytes());
        out.extend(text.as_bytes());
        out.extend(self.iteration.to_le_bytes());
        out.extend((self.params.len() as u32).to_le_bytes());
        for (name, w) in self.params.iter() {
            put_record(&mut out, name, w.shape(), w.data());
        }
        out.extend(self.optimizer.step.to_le_bytes());
        out.extend(((self.optimizer.m.len() + self.optimizer.v.len()) as u32).to_le_bytes());
        for (prefix, map) in [(M_PREFIX, &self.optimizer.m), (V_PREFIX, &self.optimizer.v)] {
            for (name, data) in map {
                put_record(&mut out, &format!("{prefix}{name}"), &[data.len()], data);
            }
        }
        out.extend(self.rng.seed().to_le_bytes());
        out.extend(self.rng.stream().to_le_bytes());
        out.extend(self.rng.counter().to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Parse {
            what: "checkpoint".into(),
            reason,
        };
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config = Config::parse(&r.string()?)?;
        let iteration = r.u64()?;
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let (name, w) = r.record()?;
            params.insert(&name, w)?;
        }
        let mut optimizer = AdamW::new(config.train.weight_decay);
        optimizer.step = r.u64()?;
        for _ in 0..r.u32()? {
            let (name, w) = r.record()?;
            let (map, key) = if let Some(k) = name.strip_prefix(M_PREFIX) {
                (&mut optimizer.m, k)
            } else if let Some(k) = name.strip_prefix(V_PREFIX) {
                (&mut optimizer.v, k)
            } else {
                return Err(bad(format!("unexpected optimizer record `{name}`")));
            };
            if !params.contains(key) {
                return Err(bad(format!("optimizer state for unknown parameter `{key}`")));
            }
            map.insert(key.to_string(), w.into_data());
        }
        let rng = RngStream::from_state(r.u64()?, r.u64()?, r.u128()?);
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        check_params(&config.denoiser, &params)?;
        Ok(Self {
            config,
            iteration,
            params,
            optimizer,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Bitwise equality of everything that influences further training.
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        let bits = |m: &std::collections::BTreeMap<String, Vec<f32>>| -> Vec<(String, Vec<u32>)> {
            m.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| x.to_bits()).collect())).collect()
        };
        self.config == other.config
            && self.iteration == other.iteration
            && self.params.bitwise_eq(&other.params)
            && self.optimizer.step == other.optimizer.step
            && bits(&self.optimizer.m) == bits(&other.optimizer.m)
            && bits(&self.optimizer.v) == bits(&other.optimizer.v)
            && (self.rng.seed(), self.rng.stream(), self.rng.counter())
                == (other.rng.seed(), other.rng.stream(), other.rng.counter())
    }
}
