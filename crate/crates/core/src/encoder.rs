//! Sentence-pair encoders.
//!
//! An [`Encoder`] turns each relation into one vector: the pair is rendered as
//! `<s> arg1 </s> arg2`, featurized, and passed through a trainable
//! `tanh(W x + b)` projection. Two featurizers exist:
//!
//! * hashed token counts (the toy encoder, no external assets), and
//! * mean-pooled frozen word vectors read from a weights directory (the
//!   pretrained adapter).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::corpus::RelationExample;
use crate::error::{Error, Result};

pub const BEGIN_MARKER: &str = "<s>";
pub const SEP_MARKER: &str = "</s>";
pub const DEFAULT_MAX_LEN: usize = 256;
/// File expected inside an adapter weights directory.
pub const ADAPTER_EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    /// One row per input example.
    pub vectors: Array2<f64>,
    pub ids: Vec<String>,
    /// Number of examples whose arguments were cut to fit `max_len`.
    pub truncated: usize,
}

impl EncodedBatch {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

pub trait SentenceEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, batch: &[RelationExample]) -> Result<EncodedBatch>;
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(token: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Frozen word vectors, one `token v1 .. vd` line each. A leading
/// `count dim` header line (word2vec text format) is accepted.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub source: PathBuf,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(ADAPTER_EMBEDDINGS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut vectors = HashMap::new();
        let mut dim = 0;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            let v = values
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if dim == 0 {
                dim = v.len();
            }
            if v.len() != dim || dim == 0 {
                return Err(Error::Config(format!(
                    "{}:{}: expected {dim} values, found {}",
                    path.display(),
                    i + 1,
                    v.len()
                )));
            }
            vectors.insert(token.to_lowercase(), v);
        }
        if vectors.is_empty() {
            return Err(Error::Config(format!("{}: no vectors", path.display())));
        }
        Ok(EmbeddingTable {
            dim,
            source: dir.as_ref().to_path_buf(),
            vectors,
        })
    }

    fn normalize(token: &str) -> String {
        token
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase()
    }

    /// Mean of the known tokens' vectors; zeros when none are known.
    pub fn mean_vector(&self, tokens: &[&str]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim);
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.vectors.get(&Self::normalize(t)) {
                acc += &ArrayView1::from(v.as_slice());
                n += 1;
            }
        }
        if n > 0 {
            acc /= n as f64;
        }
        acc
    }
}

#[derive(Clone, Debug)]
pub enum Featurizer {
    /// Hashed whitespace-token counts over `buckets` bins.
    Hash {
        buckets: usize,
    },
    Embedding(EmbeddingTable),
}

impl Featurizer {
    pub fn width(&self) -> usize {
        match self {
            Featurizer::Hash { buckets } => *buckets,
            Featurizer::Embedding(t) => t.dim,
        }
    }

    pub fn features(&self, tokens: &[&str]) -> Array1<f64> {
        match self {
            Featurizer::Hash { buckets } => {
                let mut counts = Array1::zeros(*buckets);
                for t in tokens {
                    counts[(fnv1a(t) % *buckets as u64) as usize] += 1.0;
                }
                counts
            }
            Featurizer::Embedding(table) => table.mean_vector(tokens),
        }
    }
}

/// Trainable `tanh(W x + b)` map; `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Projection {
    pub fn seeded(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("positive std");
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| normal.sample(&mut rng));
        let uniform = Uniform::new_inclusive(-0.1, 0.1);
        let bias = Array1::from_shape_fn(out_dim, |_| uniform.sample(&mut rng));
        Projection { weight, bias }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Rows of `features` map to rows of the output.
    pub fn forward(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut z = features.dot(&self.weight.t());
        z += &self.bias;
        z.mapv_inplace(f64::tanh);
        z
    }

    /// Parameter gradients given the forward input, its output and the
    /// gradient of the loss with respect to that output.
    pub fn backward(
        &self,
        features: &Array2<f64>,
        output: &Array2<f64>,
        grad_output: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>) {
        let grad_z = grad_output * &output.mapv(|h| 1.0 - h * h);
        (grad_z.t().dot(features), grad_z.sum_axis(Axis(0)))
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub featurizer: Featurizer,
    pub projection: Projection,
    pub max_len: usize,
}

impl Encoder {
    /// Hashed-count encoder with `d` buckets and a `d × d` seeded projection.
    pub fn toy(d: usize, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Usage(format!(
                "toy encoder width must be >= 2, got {d}"
            )));
        }
        Ok(Encoder {
            featurizer: Featurizer::Hash { buckets: d },
            projection: Projection::seeded(d, d, seed),
            max_len: DEFAULT_MAX_LEN,
        })
    }

    /// Frozen word vectors from `dir` followed by a trainable `d`-wide
    /// projection.
    pub fn adapter(dir: impl AsRef<Path>, d: usize, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Usage(format!("encoder width must be >= 2, got {d}")));
        }
        let table = EmbeddingTable::load(dir)?;
        let width = table.dim;
        Ok(Encoder {
            featurizer: Featurizer::Embedding(table),
            projection: Projection::seeded(d, width, seed),
            max_len: DEFAULT_MAX_LEN,
        })
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    /// `<s> arg1 </s> arg2` as whitespace tokens, dropping argument tails
    /// (longer argument first) to fit `max_len`. Returns whether anything
    /// was dropped.
    pub fn input_tokens<'a>(&self, e: &'a RelationExample) -> (Vec<&'a str>, bool) {
        let mut a1: Vec<&str> = e.arg1.split_whitespace().collect();
        let mut a2: Vec<&str> = e.arg2.split_whitespace().collect();
        let budget = self.max_len.saturating_sub(2);
        let mut truncated = false;
        while a1.len() + a2.len() > budget {
            truncated = true;
            if a1.len() >= a2.len() {
                a1.pop();
            } else {
                a2.pop();
            }
        }
        let mut tokens = Vec::with_capacity(a1.len() + a2.len() + 2);
        tokens.push(BEGIN_MARKER);
        tokens.extend(a1);
        tokens.push(SEP_MARKER);
        tokens.extend(a2);
        (tokens, truncated)
    }

    /// Featurizer output for a batch, plus the truncation count.
    pub fn featurize(&self, batch: &[RelationExample]) -> Result<(Array2<f64>, usize)> {
        if batch.is_empty() {
            return Err(Error::Usage("cannot encode an empty batch".into()));
        }
        let mut x = Array2::zeros((batch.len(), self.featurizer.width()));
        let mut truncated = 0;
        for (i, e) in batch.iter().enumerate() {
            if e.arg1.trim().is_empty() || e.arg2.trim().is_empty() {
                return Err(Error::Usage(format!(
                    "example `{}` has an empty argument",
                    e.log_id()
                )));
            }
            let (tokens, cut) = self.input_tokens(e);
            truncated += usize::from(cut);
            x.row_mut(i).assign(&self.featurizer.features(&tokens));
        }
        Ok((x, truncated))
    }

    /// Encodes raw whitespace-tokenized text without markers.
    pub fn encode_text(&self, text: &str) -> Array1<f64> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let x = self.featurizer.features(&tokens).insert_axis(Axis(0));
        self.projection.forward(&x).row(0).to_owned()
    }
}

impl SentenceEncoder for Encoder {
    fn dim(&self) -> usize {
        self.projection.out_dim()
    }

    fn encode(&self, batch: &[RelationExample]) -> Result<EncodedBatch> {
        let (x, truncated) = self.featurize(batch)?;
        Ok(EncodedBatch {
            vectors: self.projection.forward(&x),
            ids: batch.iter().map(|e| e.rel_id.clone()).collect(),
            truncated,
        })
    }
}

pub fn toy_encode(batch: &[RelationExample], d: usize, seed: u64) -> Result<EncodedBatch> {
    Encoder::toy(d, seed)?.encode(batch)
}
