//! Hyperedge text features.
//!
//! News texts are mapped to fixed-length vectors either by a deterministic
//! hashed n-gram embedder (the default — no model weights, no network, same
//! bits on every platform) or by loading precomputed vectors from file so
//! real language-model embeddings can be injected without touching the
//! pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{lane_dot, Tensor};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    ParseError { path: String, line: usize, msg: String },
    #[error("embeddings file is missing id {0}")]
    MissingId(String),
    #[error("embedding for {id} has dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedderKind {
    HashedNgram,
    Precomputed,
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderKind::HashedNgram => "hashed_ngram",
            EmbedderKind::Precomputed => "precomputed",
        })
    }
}

impl std::str::FromStr for EmbedderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hashed_ngram" => Ok(EmbedderKind::HashedNgram),
            "precomputed" => Ok(EmbedderKind::Precomputed),
            other => Err(format!("unknown embedder kind '{other}' (hashed_ngram|precomputed)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub hash_seed: u64,
    pub lowercase: bool,
}

impl EmbedderConfig {
    pub fn hashed(dimension: usize) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::HashedNgram,
            dimension,
            ngram_min: 1,
            ngram_max: 2,
            hash_seed: 0,
            lowercase: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dimension < 8 {
            return Err(format!("embed.dimension must be >= 8, got {}", self.dimension));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(format!(
                "ngram range must satisfy 1 <= min <= max, got {}..{}",
                self.ngram_min, self.ngram_max
            ));
        }
        Ok(())
    }

    /// Stable description string; folded into checkpoint config hashes.
    pub fn describe(&self) -> String {
        format!(
            "kind={} dimension={} ngram={}..{} hash_seed={} lowercase={}",
            self.kind, self.dimension, self.ngram_min, self.ngram_max, self.hash_seed, self.lowercase
        )
    }
}

/// Seeded 64-bit FNV-1a. Stable across platforms and runs by construction.
pub(crate) fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    // Mix the seed through the splitmix finalizer so nearby seeds give
    // unrelated hash streams, then fold it into the FNV offset basis.
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ crate::seeding::sub_seed(seed, 0x4846_4e56_0000_0000);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased (per config) maximal alphanumeric runs. Splitting on every
/// non-alphanumeric character covers Unicode whitespace and punctuation in
/// one rule with no tables.
fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let owned;
    let src = if lowercase {
        owned = text.to_lowercase();
        &owned
    } else {
        text
    };
    src.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Hashes a text into a signed bag-of-n-grams vector of length
/// `config.dimension`, L2-normalized; empty text gives the zero vector.
///
/// Each n-gram's 64-bit hash picks a bucket (modulo d) and a sign (top bit),
/// so collisions partially cancel instead of compounding.
pub fn embed_text(text: &str, config: &EmbedderConfig) -> Vec<f64> {
    let d = config.dimension;
    let mut v = vec![0.0f64; d];
    let tokens = tokenize(text, config.lowercase);
    let mut gram = String::new();
    for n in config.ngram_min..=config.ngram_max {
        if n > tokens.len() {
            break;
        }
        for window in tokens.windows(n) {
            gram.clear();
            for (k, tok) in window.iter().enumerate() {
                if k > 0 {
                    gram.push('\u{1f}');
                }
                gram.push_str(tok);
            }
            let h = fnv1a64(config.hash_seed, gram.as_bytes());
            let bucket = (h % d as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign;
        }
    }
    let norm = lane_dot(&v, &v).sqrt();
    if norm > 0.0 {
        let inv = 1.0 / norm;
        for x in &mut v {
            *x *= inv;
        }
    }
    v
}

/// Embeds every text into the rows of a t×d matrix.
pub fn embed_all(texts: &[String], config: &EmbedderConfig) -> Tensor {
    let mut out = Tensor::zeros(texts.len(), config.dimension);
    for (i, text) in texts.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&embed_text(text, config));
    }
    out
}

/// Loads precomputed embeddings (`edge_id<TAB>v1,v2,...,vd` per line),
/// requiring every expected id to be present and all vectors to share one
/// dimension.
pub fn load_precomputed(
    path: &Path,
    expected_ids: &[String],
) -> Result<BTreeMap<String, Vec<f64>>, EmbedError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)
        .map_err(|source| EmbedError::Io { path: display.clone(), source })?;
    let mut map = BTreeMap::new();
    let mut dim: Option<(String, usize)> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EmbedError::Io { path: display.clone(), source })?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| EmbedError::ParseError {
            path: display.clone(),
            line: lineno,
            msg: "expected `edge_id<TAB>v1,v2,...`".into(),
        })?;
        let values: Vec<f64> = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| EmbedError::ParseError {
                path: display.clone(),
                line: lineno,
                msg: format!("bad float: {e}"),
            })?;
        match &dim {
            None => dim = Some((id.to_owned(), values.len())),
            Some((_, d)) if *d != values.len() => {
                return Err(EmbedError::DimensionMismatch {
                    id: id.to_owned(),
                    expected: *d,
                    got: values.len(),
                });
            }
            Some(_) => {}
        }
        map.insert(id.to_owned(), values);
    }
    for id in expected_ids {
        if !map.contains_key(id) {
            return Err(EmbedError::MissingId(id.clone()));
        }
    }
    Ok(map)
}

/// Stacks precomputed vectors into a matrix, row i = embedding of `ids[i]`.
pub fn precomputed_matrix(
    map: &BTreeMap<String, Vec<f64>>,
    ids: &[String],
) -> Result<Tensor, EmbedError> {
    let d = ids
        .first()
        .and_then(|id| map.get(id))
        .map(Vec::len)
        .unwrap_or(0);
    let mut out = Tensor::zeros(ids.len(), d);
    for (i, id) in ids.iter().enumerate() {
        let v = map.get(id).ok_or_else(|| EmbedError::MissingId(id.clone()))?;
        if v.len() != d {
            return Err(EmbedError::DimensionMismatch {
                id: id.clone(),
                expected: d,
                got: v.len(),
            });
        }
        out.row_mut(i).copy_from_slice(v);
    }
    Ok(out)
}
