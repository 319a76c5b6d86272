//! Document representation `h`.
//!
//! Two encoders are available: `external` passes through embeddings
//! computed elsewhere (the usual case — a pretrained encoder's pooled
//! output), and `hashed_ngram` is a small trainable bag-of-ngrams lookup
//! table for end-to-end runs on raw text. N-grams are character n-grams
//! hashed with 64-bit FNV-1a into `buckets` rows; a document encodes to
//! the mean of its bucket rows.

use serde::{Deserialize, Serialize};

use crate::data::Document;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{fnv1a64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    External,
    HashedNgram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Output dimension H. For the external kind this must equal the
    /// dataset's embedding dimension.
    pub hidden_dim: usize,
    /// Hash-table rows (hashed kind).
    pub buckets: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub trainable: bool,
}

impl EncoderConfig {
    pub fn external(hidden_dim: usize) -> Self {
        Self {
            kind: EncoderKind::External,
            hidden_dim,
            buckets: 0,
            ngram_min: 0,
            ngram_max: 0,
            trainable: false,
        }
    }

    pub fn hashed(hidden_dim: usize, buckets: usize, ngram_min: usize, ngram_max: usize) -> Self {
        Self {
            kind: EncoderKind::HashedNgram,
            hidden_dim,
            buckets,
            ngram_min,
            ngram_max,
            trainable: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("encoder.hidden_dim must be positive".into()));
        }
        if self.kind == EncoderKind::HashedNgram {
            if self.buckets == 0 {
                return Err(Error::InvalidConfig("encoder.buckets must be positive".into()));
            }
            if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
                return Err(Error::InvalidConfig(format!(
                    "encoder ngram range must satisfy 1 <= min <= max, got {}..{}",
                    self.ngram_min, self.ngram_max
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncoderParams {
    External,
    Hashed {
        /// buckets x hidden_dim lookup table.
        table: Mat,
    },
}

impl EncoderParams {
    pub fn table(&self) -> Option<&Mat> {
        match self {
            EncoderParams::External => None,
            EncoderParams::Hashed { table } => Some(table),
        }
    }
}

/// Table rows uniform in `±1/sqrt(H)`, deterministic per seed.
pub fn init_encoder_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    match config.kind {
        EncoderKind::External => Ok(EncoderParams::External),
        EncoderKind::HashedNgram => {
            let bound = 1.0 / (config.hidden_dim as f64).sqrt();
            let mut rng = SplitMix64::new(seed);
            let mut table = Mat::zeros(config.buckets, config.hidden_dim);
            for v in table.data_mut() {
                *v = rng.uniform(-bound, bound);
            }
            Ok(EncoderParams::Hashed { table })
        }
    }
}

/// Encoded batch: the feature matrix plus, for the hashed kind, the
/// bucket indices of every n-gram per document (needed by the backward
/// pass).
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub features: Mat,
    pub ngram_buckets: Vec<Vec<usize>>,
}

fn char_ngram_buckets(text: &str, config: &EncoderConfig) -> Vec<usize> {
    let chars: Vec<char> = text.chars().collect();
    let mut buckets = Vec::new();
    let mut buf = String::new();
    for n in config.ngram_min..=config.ngram_max {
        if n > chars.len() {
            break;
        }
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window.iter());
            buckets.push((fnv1a64(buf.as_bytes()) % config.buckets as u64) as usize);
        }
    }
    buckets
}

pub fn encode_batch(
    docs: &[Document],
    config: &EncoderConfig,
    params: &EncoderParams,
) -> Result<EncodedBatch> {
    config.validate()?;
    let n = docs.len();
    let h = config.hidden_dim;
    let mut features = Mat::zeros(n, h);
    let mut ngram_buckets = vec![Vec::new(); n];
    match (config.kind, params) {
        (EncoderKind::External, _) => {
            for (i, doc) in docs.iter().enumerate() {
                let emb = doc
                    .embedding
                    .as_ref()
                    .ok_or_else(|| Error::MissingEmbedding(doc.id.clone()))?;
                if emb.len() != h {
                    return Err(Error::DimensionMismatch {
                        id: doc.id.clone(),
                        expected: h,
                        actual: emb.len(),
                    });
                }
                features.row_mut(i).copy_from_slice(emb);
            }
        }
        (EncoderKind::HashedNgram, EncoderParams::Hashed { table }) => {
            for (i, doc) in docs.iter().enumerate() {
                let text = doc
                    .text
                    .as_ref()
                    .ok_or_else(|| Error::MissingText(doc.id.clone()))?;
                let buckets = char_ngram_buckets(text, config);
                if !buckets.is_empty() {
                    let scale = 1.0 / buckets.len() as f64;
                    let row = features.row_mut(i);
                    for &b in &buckets {
                        for (acc, &t) in row.iter_mut().zip(table.row(b)) {
                            *acc += t * scale;
                        }
                    }
                }
                ngram_buckets[i] = buckets;
            }
        }
        (EncoderKind::HashedNgram, EncoderParams::External) => {
            return Err(Error::Unsupported(
                "hashed encoder called without a lookup table".into(),
            ));
        }
    }
    Ok(EncodedBatch {
        features,
        ngram_buckets,
    })
}

/// Gradient of the mean-pooled lookup: bucket `b` accumulates
/// `dL/dh_i / n_i` for every occurrence in document `i`.
pub fn encoder_backward(
    ngram_buckets: &[Vec<usize>],
    dh: &Mat,
    config: &EncoderConfig,
) -> Result<Mat> {
    if config.kind != EncoderKind::HashedNgram {
        return Err(Error::Unsupported(
            "encoder_backward is only defined for the hashed encoder".into(),
        ));
    }
    if !config.trainable {
        return Err(Error::Unsupported(
            "encoder_backward called on a frozen encoder".into(),
        ));
    }
    if ngram_buckets.len() != dh.rows() {
        return Err(Error::ShapeMismatch(format!(
            "encoder_backward: {} bucket lists vs {} gradient rows",
            ngram_buckets.len(),
            dh.rows()
        )));
    }
    let mut grad = Mat::zeros(config.buckets, config.hidden_dim);
    for (i, buckets) in ngram_buckets.iter().enumerate() {
        if buckets.is_empty() {
            continue;
        }
        let scale = 1.0 / buckets.len() as f64;
        let src = dh.row(i).to_vec();
        for &b in buckets {
            let dst = grad.row_mut(b);
            for (d, &s) in dst.iter_mut().zip(&src) {
                *d += s * scale;
            }
        }
    }
    Ok(grad)
}
