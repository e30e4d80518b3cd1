//! Binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CNF1" | version u16
//! model text: len u32 + UTF-8
//! tensor count u32, tensors
//! optimizer: kind u8 (0 sgd, 1 adam), alpha f64
//!   adam: beta1 f64, beta2 f64, epsilon f64, step u64, m tensors, v tensors
//! epoch u32
//! rng: seed [u8; 32], stream u64, word position u128
//! config digest [u8; 32]
//! crc32 u32 of everything before it
//! ```
//!
//! A tensor is rank u8, extents u32 each, then the f64 payload.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{ModelSpec, Network, Tensor};
use crate::optim::{AdamState, Optimizer};

pub const MAGIC: [u8; 4] = *b"CNF1";
pub const VERSION: u16 = 1;

/// Enough to rebuild a [`ChaCha8Rng`] at an exact position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
    pub optimizer: Optimizer,
    pub epoch: u32,
    pub rng: RngState,
    pub config_digest: [u8; 32],
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        Network::from_parts(self.spec.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.spec.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        put_tensors(&mut out, &self.params);
        match &self.optimizer {
            Optimizer::Sgd { alpha } => {
                out.push(0);
                out.extend_from_slice(&alpha.to_le_bytes());
            }
            Optimizer::Adam(st) => {
                out.push(1);
                for v in [st.alpha, st.beta1, st.beta2, st.epsilon] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&st.step.to_le_bytes());
                put_tensors(&mut out, &st.m);
                put_tensors(&mut out, &st.v);
            }
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let text_len = r.u32("model text length")? as usize;
        let text_at = r.pos;
        let text = std::str::from_utf8(r.take(text_len, "model text")?).map_err(|_| r.corrupt_at(text_at, "model text is not UTF-8"))?;
        let spec = ModelSpec::parse_text(text).map_err(|e| r.corrupt_at(text_at, &format!("model text: {e}")))?;
        let params = r.tensors()?;
        let optimizer = match r.array::<1>("optimizer kind")?[0] {
            0 => Optimizer::Sgd { alpha: r.f64("alpha")? },
            1 => {
                let alpha = r.f64("alpha")?;
                let beta1 = r.f64("beta1")?;
                let beta2 = r.f64("beta2")?;
                let epsilon = r.f64("epsilon")?;
                let step = u64::from_le_bytes(r.array("adam step")?);
                let m = r.tensors()?;
                let v = r.tensors()?;
                Optimizer::Adam(AdamState {
                    m,
                    v,
                    step,
                    alpha,
                    beta1,
                    beta2,
                    epsilon,
                })
            }
            k => return Err(r.corrupt_at(r.pos - 1, &format!("unknown optimizer kind {k}"))),
        };
        let epoch = r.u32("epoch")?;
        let rng = RngState {
            seed: r.array("rng seed")?,
            stream: u64::from_le_bytes(r.array("rng stream")?),
            word_pos: u128::from_le_bytes(r.array("rng position")?),
        };
        let config_digest = r.array("config digest")?;
        let body_end = r.pos;
        let stored = u32::from_le_bytes(r.array("checksum")?);
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos, "trailing bytes after checksum"));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        Network::from_parts(spec.clone(), params.clone())
            .map_err(|e| CheckpointError::Corrupt { offset: text_at, reason: e.to_string() })?;
        Ok(Self {
            spec,
            params,
            optimizer,
            epoch,
            rng,
            config_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[Tensor]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize, reason: &str) -> CheckpointError {
        CheckpointError::Corrupt {
            offset,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt_at(
                self.pos,
                &format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn tensors(&mut self) -> Result<Vec<Tensor>, CheckpointError> {
        let count = self.u32("tensor count")? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let at = self.pos;
            let rank = self.array::<1>("tensor rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32("tensor extent")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| self.corrupt_at(at, "tensor size overflows"))?;
            let payload = self.take(n, "tensor payload")?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            out.push(Tensor::new(shape, data).map_err(|e| self.corrupt_at(at, &e.to_string()))?);
        }
        Ok(out)
    }
}

/// Fresh RNG state for a seed, as stored before any draws.
pub fn rng_state_for_seed(seed: u64) -> RngState {
    RngState::capture(&ChaCha8Rng::seed_from_u64(seed))
}
