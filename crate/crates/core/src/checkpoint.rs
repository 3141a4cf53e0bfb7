//! Versioned binary checkpoint holding the model config, vocabulary and
//! every named parameter matrix.
//!
//! ```text
//! "V2CK" | format version u32
//! config : cell u8 | hidden u32 | feature_dim u32 | vocab_size u32 | n_steps u32 | init_range f64 | seed u64
//! vocab  : count u32 | { len u32 | utf-8 bytes }*
//! params : count u32 | { name_len u32 | name | rows u32 | cols u32 | rows*cols f64 }*
//! sha256 of all preceding bytes (32 bytes)
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cells::CellKind;
use crate::error::{Result, V2cError};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::numerics::Matrix;
use crate::vocab::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"V2CK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| V2cError::Format(format!("value {v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u32(b.len())?;
        self.0.extend_from_slice(b);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| V2cError::Format(format!("checkpoint truncated at byte {} (needed {n} more)", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| V2cError::Format("checkpoint string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn new(model: Model, vocab: Vocabulary) -> Result<Self> {
        if vocab.len() != model.config.vocab_size {
            return Err(V2cError::Config(format!("vocabulary has {} tokens, model expects {}", vocab.len(), model.config.vocab_size)));
        }
        Ok(Checkpoint { model, vocab })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = &self.model.config;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.0.push(match cfg.cell_kind {
            CellKind::Lstm => 0,
            CellKind::Gru => 1,
        });
        w.u32(cfg.hidden)?;
        w.u32(cfg.feature_dim)?;
        w.u32(cfg.vocab_size)?;
        w.u32(cfg.n_steps)?;
        w.0.extend_from_slice(&cfg.init_range.to_le_bytes());
        w.0.extend_from_slice(&cfg.seed.to_le_bytes());

        w.u32(self.vocab.len())?;
        for t in self.vocab.tokens() {
            w.bytes(t.as_bytes())?;
        }

        let mats = self.model.params.matrices();
        w.u32(mats.len())?;
        for (name, m) in mats {
            w.bytes(name.as_bytes())?;
            w.u32(m.rows())?;
            w.u32(m.cols())?;
            for v in m.data() {
                w.0.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + DIGEST_LEN {
            return Err(V2cError::Format(format!("checkpoint too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(V2cError::Format(format!("not a checkpoint: magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(V2cError::VersionMismatch { expected: CHECKPOINT_VERSION, found: version });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(V2cError::Checksum);
        }

        let mut r = Reader { buf: body, pos: 8 };
        let cell_kind = match r.u8()? {
            0 => CellKind::Lstm,
            1 => CellKind::Gru,
            k => return Err(V2cError::Format(format!("unknown cell kind code {k}"))),
        };
        let config = ModelConfig {
            cell_kind,
            hidden: r.u32()?,
            feature_dim: r.u32()?,
            vocab_size: r.u32()?,
            n_steps: r.u32()?,
            init_range: r.f64()?,
            seed: r.u64()?,
        };
        config.validate()?;

        let n_tokens = r.u32()?;
        let tokens = (0..n_tokens).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_tokens(tokens)?;

        let mut params = ModelParams::zeros(cell_kind, config.feature_dim, config.hidden, config.vocab_size);
        let count = r.u32()?;
        let mut mats = params.matrices_mut();
        if count != mats.len() {
            return Err(V2cError::Format(format!("checkpoint has {count} parameters, expected {}", mats.len())));
        }
        for (name, m) in mats.iter_mut() {
            let found = r.string()?;
            let (rows, cols) = (r.u32()?, r.u32()?);
            if &found != name || (rows, cols) != m.shape() {
                return Err(V2cError::Format(format!(
                    "parameter `{found}` {rows}x{cols} does not match expected `{name}` {:?}",
                    m.shape()
                )));
            }
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            **m = Matrix::from_vec(rows, cols, data)?;
        }
        drop(mats);
        if r.pos != body.len() {
            return Err(V2cError::Format(format!("{} trailing bytes in checkpoint", body.len() - r.pos)));
        }
        Checkpoint::new(Model::from_parts(config, params)?, vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| V2cError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| V2cError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
