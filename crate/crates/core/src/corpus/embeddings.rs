use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::vocab::{Vocabulary, PAD};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Range of the uniform initializer for rows not covered by pretrained vectors.
pub const OOV_RANGE: f64 = 0.1;

/// `|V| × d_e` word vectors. Row 0 (PAD) is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    /// Rows copied from a pretrained file.
    pub covered: usize,
}

impl EmbeddingTable {
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, d_e: usize, rng: &mut R) -> Self {
        let dist = Uniform::new(-OOV_RANGE, OOV_RANGE).expect("valid range");
        let mut data: Vec<f64> = (0..vocab_size * d_e).map(|_| dist.sample(rng)).collect();
        data[PAD * d_e..(PAD + 1) * d_e].fill(0.0);
        EmbeddingTable {
            matrix: Tensor::new(vec![vocab_size, d_e], data).expect("shape"),
            covered: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// Reads word2vec text format (`<count> <dim>` header, then `<token> v1 .. vdim`).
///
/// Rows for tokens present in the file are copied; every other row (UNK
/// included) keeps its uniform initialization. A missing file yields a fully
/// random table when `allow_random` is set.
pub fn load_embeddings<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocabulary,
    d_e: usize,
    allow_random: bool,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab.len(), d_e, rng);
    if !path.exists() && allow_random {
        return Ok(table);
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("embedding file has no header".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| {
        s.parse::<usize>().map_err(|e| Error::Parse {
            line: 1,
            msg: format!("header field {s:?}: {e}"),
        })
    };
    let [count, dim] = head[..] else {
        return Err(Error::Format(format!("header must be '<count> <dim>', got {header:?}")));
    };
    let (count, dim) = (parse_usize(count)?, parse_usize(dim)?);
    if dim != d_e {
        return Err(Error::Format(format!("file dimension {dim} differs from d_e = {d_e}")));
    }
    let mut seen = 0;
    for (i, line) in lines {
        seen += 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-blank line");
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::Format(format!(
                "line {} has {} values, expected {dim}",
                i + 1,
                values.len()
            )));
        }
        if let Some(id) = vocab.lookup(token) {
            table.matrix.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
            table.covered += 1;
        }
    }
    if seen != count {
        return Err(Error::Format(format!("header declares {count} vectors, file has {seen}")));
    }
    Ok(table)
}
