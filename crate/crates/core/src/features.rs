//! Hashed n-gram features for a (text, aspect) pair.
//!
//! The text and the aspect are featurized separately and kept in two index
//! multisets, so the model can pool each segment on its own.
//!
//! Token hash (fixed across platforms and releases):
//!
//! ```text
//! h = FNV-1a 64 over (hash_seed as 8 little-endian bytes) ++ (token UTF-8 bytes)
//!     offset basis 0xcbf29ce484222325, prime 0x00000100000001b3
//! h = fmix64(h)   // MurmurHash3 finalizer
//!     h ^= h >> 33; h *= 0xff51afd7ed558ccd; h ^= h >> 33;
//!     h *= 0xc4ceb9fe1a85ec53; h ^= h >> 33
//! bucket = h mod bucket_count
//! ```

use serde::{Deserialize, Serialize};

use crate::corpus::NULL_ASPECT;
use crate::error::{Error, Result};

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
pub const FMIX_C1: u64 = 0xff51_afd7_ed55_8ccd;
pub const FMIX_C2: u64 = 0xc4ce_b9fe_1a85_ec53;

/// Whitespace chunks beyond this many are ignored.
pub const MAX_CHUNKS: usize = 128;

/// One-line description of the hash, echoed into checkpoints.
pub fn hash_descriptor() -> String {
    format!(
        "fnv1a64+fmix64 offset={FNV_OFFSET_BASIS:#018x} prime={FNV_PRIME:#018x} fmix={FMIX_C1:#018x},{FMIX_C2:#018x}"
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    pub bucket_count: usize,
    pub word_ngram_max: usize,
    /// Inclusive character n-gram lengths.
    pub char_ngram_range: (usize, usize),
    pub lowercase: bool,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            bucket_count: 4096,
            word_ngram_max: 2,
            char_ngram_range: (3, 5),
            lowercase: true,
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bucket_count < 2 {
            return Err(Error::Config("featurizer.bucket_count must be >= 2".into()));
        }
        if self.word_ngram_max < 1 {
            return Err(Error::Config("featurizer.word_ngram_max must be >= 1".into()));
        }
        let (lo, hi) = self.char_ngram_range;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!(
                "featurizer.char_ngram_range ({lo}, {hi}) must be nondecreasing and start at >= 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureIndices {
    pub text_indices: Vec<usize>,
    pub aspect_indices: Vec<usize>,
}

/// Word unigrams with their character n-grams, chunk by chunk, followed by
/// word n-grams of length 2..=word_ngram_max.
pub fn tokenize(s: &str, cfg: &FeaturizerConfig) -> Vec<String> {
    let normalized;
    let s = if cfg.lowercase {
        normalized = s.to_lowercase();
        normalized.as_str()
    } else {
        s
    };
    let chunks: Vec<&str> = s.split_whitespace().take(MAX_CHUNKS).collect();
    let (cmin, cmax) = cfg.char_ngram_range;

    let mut out = Vec::new();
    for chunk in &chunks {
        out.push((*chunk).to_string());
        let chars: Vec<char> = chunk.chars().collect();
        for n in cmin..=cmax.min(chars.len()) {
            out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
        }
    }
    for n in 2..=cfg.word_ngram_max {
        out.extend(chunks.windows(n).map(|w| w.join(" ")));
    }
    out
}

fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(FMIX_C1);
    h ^= h >> 33;
    h = h.wrapping_mul(FMIX_C2);
    h ^ (h >> 33)
}

pub fn hash_token(token: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET_BASIS;
    for &b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    fmix64(h)
}

pub fn hash_ngrams<S: AsRef<str>>(tokens: &[S], cfg: &FeaturizerConfig) -> Vec<usize> {
    let buckets = cfg.bucket_count as u64;
    tokens
        .iter()
        .map(|t| (hash_token(t.as_ref(), cfg.hash_seed) % buckets) as usize)
        .collect()
}

pub fn encode_pair(text: &str, aspect: &str, cfg: &FeaturizerConfig) -> FeatureIndices {
    let aspect = if aspect.is_empty() { NULL_ASPECT } else { aspect };
    FeatureIndices {
        text_indices: hash_ngrams(&tokenize(text, cfg), cfg),
        aspect_indices: hash_ngrams(&tokenize(aspect, cfg), cfg),
    }
}
