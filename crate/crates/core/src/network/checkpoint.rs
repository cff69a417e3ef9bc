//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes  "ECPECKPT"
//! version      u32      1
//! config       u32 length + UTF-8 `key=value` lines
//! vocabulary   u32 count, then per token: u32 length + UTF-8 bytes (ids 2, 3, ...)
//! tensors      u32 count, then per tensor:
//!                u32 name length + UTF-8 name
//!                u32 rank, rank × u64 dims
//!                prod(dims) × f64 values, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Ablation, ModelConfig, ParameterSet};
use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ECPECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run a trained model on new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub vocab: Vocabulary,
    pub ablation: Ablation,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, self)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint(&fs::read(path)?)
    }
}

fn config_text(cfg: &ModelConfig, ablation: Ablation) -> String {
    let kernels: Vec<String> = cfg.kernel_sizes.iter().map(ToString::to_string).collect();
    format!(
        "d_e={}\nkernel_sizes={}\nd_c={}\nd_h={}\nd_z={}\nepsilon={:?}\nuse_position={}\nuse_aux={}\n",
        cfg.d_e,
        kernels.join(","),
        cfg.d_c,
        cfg.d_h,
        cfg.d_z,
        cfg.epsilon,
        ablation.use_position,
        ablation.use_aux
    )
}

fn parse_config(text: &str) -> Result<(ModelConfig, Ablation)> {
    let mut cfg = ModelConfig::default();
    let mut ablation = Ablation::default();
    let bad = |k: &str, v: &str| Error::Format(format!("bad checkpoint config entry {k}={v}"));
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad checkpoint config line {line:?}")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(k, v));
        let flag = |v: &str| v.parse::<bool>().map_err(|_| bad(k, v));
        match k {
            "d_e" => cfg.d_e = num(v)?,
            "d_c" => cfg.d_c = num(v)?,
            "d_h" => cfg.d_h = num(v)?,
            "d_z" => cfg.d_z = num(v)?,
            "epsilon" => cfg.epsilon = v.parse().map_err(|_| bad(k, v))?,
            "kernel_sizes" => cfg.kernel_sizes = v.split(',').map(num).collect::<Result<_>>()?,
            "use_position" => ablation.use_position = flag(v)?,
            "use_aux" => ablation.use_aux = flag(v)?,
            _ => return Err(bad(k, v)),
        }
    }
    Ok((cfg, ablation))
}

fn put_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_bytes(w, config_text(&ckpt.params.config, ckpt.ablation).as_bytes())?;
    let tokens = ckpt.vocab.corpus_tokens();
    w.write_all(&(tokens.len() as u32).to_le_bytes())?;
    for t in tokens {
        put_bytes(w, t.as_bytes())?;
    }
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, t) in ckpt.params.iter() {
        put_bytes(w, name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let (config, ablation) = parse_config(&cur.string()?)?;
    let n_tokens = cur.u32()? as usize;
    let tokens = (0..n_tokens).map(|_| cur.string()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_tokens(tokens);
    if vocab.len() != n_tokens + 2 {
        return Err(Error::Format("duplicate tokens in checkpoint vocabulary".into()));
    }
    let n_tensors = cur.u32()? as usize;
    let mut named = Vec::with_capacity(n_tensors.min(64));
    for _ in 0..n_tensors {
        let name = cur.string()?;
        let rank = cur.u32()? as usize;
        let dims = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Format(format!("tensor {name} has implausible shape {dims:?}")))?;
        let raw = cur.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        named.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let params = ParameterSet::from_named(config, named)?;
    if params.vocab_size() != vocab.len() {
        return Err(Error::Format(format!(
            "embedding has {} rows but vocabulary has {} entries",
            params.vocab_size(),
            vocab.len()
        )));
    }
    Ok(Checkpoint { params, vocab, ablation })
}
