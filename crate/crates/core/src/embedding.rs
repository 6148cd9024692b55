//! Deterministic text embeddings and cosine similarity.
//!
//! Text is lowercased, split on runs of non-alphanumeric characters and each
//! token is feature-hashed into one of `dim` coordinates with a signed unit
//! contribution. The result is L2-normalized. Empty token sets produce the
//! all-zero sentinel, whose cosine with anything is defined as `0.0`.
//!
//! The hash is FNV-1a (64 bit) started from a seeded offset basis and passed
//! through the splitmix64 finalizer. The low bits pick the coordinate, the top
//! bit picks the sign. Summation order is fixed so results are bit-identical
//! across runs and platforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 64;

/// Seed folded into the FNV offset basis.
pub const HASH_SEED: u64 = 0x5eed_acdf_2025_0001;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("embedding dimension mismatch: {left} vs {right} (inconsistent dimension config)")]
pub struct DimensionMismatch {
    pub left: usize,
    pub right: usize,
}

/// A unit-norm vector, or the all-zero sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// All-zero sentinel of the given dimension.
    pub fn zero(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    /// L2-normalizes `values`. A zero vector stays the zero sentinel.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
        Embedding(values)
    }

    /// Normalized mean of a set of embeddings; zero sentinel when the mean vanishes.
    pub fn mean<'a, I>(dim: usize, items: I) -> Result<Self, DimensionMismatch>
    where
        I: IntoIterator<Item = &'a Embedding>,
    {
        let mut acc = vec![0.0; dim];
        for e in items {
            if e.dim() != dim {
                return Err(DimensionMismatch { left: dim, right: e.dim() });
            }
            for (a, v) in acc.iter_mut().zip(&e.0) {
                *a += v;
            }
        }
        Ok(Embedding::normalized(acc))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl std::ops::Neg for &Embedding {
    type Output = Embedding;

    fn neg(self) -> Embedding {
        Embedding(self.0.iter().map(|v| -v).collect())
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Lowercased alphanumeric tokens in order of appearance.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Seeded 64-bit token hash.
pub fn token_hash(token: &str) -> u64 {
    let mut h = FNV_OFFSET ^ HASH_SEED;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Coordinate and sign a token contributes to.
pub fn token_slot(token: &str, dim: usize) -> (usize, f64) {
    let h = token_hash(token);
    let idx = (h % dim as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (idx, sign)
}

/// Embeds text at the default dimension.
pub fn embed_text(text: &str) -> Embedding {
    embed_text_with_dim(text, DEFAULT_DIM)
}

pub fn embed_text_with_dim(text: &str, dim: usize) -> Embedding {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut values = vec![0.0; dim];
    for token in tokenize(text) {
        let (idx, sign) = token_slot(&token, dim);
        values[idx] += sign;
    }
    Embedding::normalized(values)
}

/// Cosine similarity, `0.0` when either side is the zero sentinel.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, DimensionMismatch> {
    if a.dim() != b.dim() {
        return Err(DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine mapped onto `[0, 1]`.
pub fn normalized_agreement(a: &Embedding, b: &Embedding) -> Result<f64, DimensionMismatch> {
    Ok((cosine(a, b)? + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(values: &[f64]) -> Embedding {
        let mut v = values.to_vec();
        v.resize(DEFAULT_DIM, 0.0);
        Embedding::normalized(v)
    }

    // Independent re-derivation of the bucket assignment, written against
    // the documented algorithm rather than the module's helpers.
    fn reference_slot(token: &str, dim: usize) -> (usize, i32) {
        let mut h: u64 = 0xcbf29ce484222325 ^ 0x5eedacdf20250001;
        for &b in token.as_bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
        let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        ((z % dim as u64) as usize, if z >> 63 == 0 { 1 } else { -1 })
    }

    #[test]
    fn empty_text_is_zero_sentinel() {
        let e = embed_text("");
        assert_eq!(e.dim(), DEFAULT_DIM);
        assert!(e.is_zero());
        assert!(embed_text("  ,;!! ").is_zero());
    }

    #[test]
    fn tokenizer_normalizes_case_and_punctuation() {
        assert_eq!(embed_text("Customs Delay"), embed_text("customs,delay!"));
        assert_eq!(tokenize("Customs, DELAY!!x2"), vec!["customs", "delay", "x2"]);
    }

    #[test]
    fn slots_match_reference_hash() {
        for tok in ["customs", "delay", "singapore", "eta", "act", "delivery", "x"] {
            let (idx, sign) = token_slot(tok, DEFAULT_DIM);
            let (ridx, rsign) = reference_slot(tok, DEFAULT_DIM);
            assert_eq!(idx, ridx, "{tok}");
            assert_eq!(sign as i32, rsign, "{tok}");
        }
    }

    #[test]
    fn disjoint_token_sets_are_orthogonal() {
        let a = embed_text("customs delay");
        assert_eq!(cosine(&a, &embed_text("customs delay")).unwrap(), 1.0);

        // Find a word whose reference slot avoids both slots of "customs delay".
        let taken = [
            reference_slot("customs", DEFAULT_DIM).0,
            reference_slot("delay", DEFAULT_DIM).0,
        ];
        let other = ["weather", "storm", "harbor", "carrier", "review", "kuala", "lumpur"]
            .into_iter()
            .find(|w| !taken.contains(&reference_slot(w, DEFAULT_DIM).0))
            .expect("some word lands on a free slot");
        assert_eq!(cosine(&a, &embed_text(other)).unwrap(), 0.0);
    }

    #[test]
    fn cosine_reference_values() {
        let x = unit(&[1.0]);
        let y = unit(&[0.6, 0.8]);
        assert!((cosine(&x, &y).unwrap() - 0.6).abs() < 1e-12);
        assert!((cosine(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&y, &-&y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_sentinel_has_zero_cosine() {
        let z = Embedding::zero(DEFAULT_DIM);
        assert_eq!(cosine(&z, &embed_text("customs")).unwrap(), 0.0);
        assert_eq!(cosine(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = embed_text_with_dim("customs", 8);
        let b = embed_text_with_dim("customs", 16);
        assert_eq!(cosine(&a, &b), Err(DimensionMismatch { left: 8, right: 16 }));
    }

    proptest! {
        #[test]
        fn non_sentinel_embeddings_are_unit_norm(s in "[a-zA-Z0-9 ,.!]{0,80}") {
            let e = embed_text(&s);
            prop_assert!(e.is_zero() || (e.norm() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(e, embed_text(&s));
        }

        #[test]
        fn cosine_is_symmetric(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
            let (ea, eb) = (embed_text(&a), embed_text(&b));
            let d = cosine(&ea, &eb).unwrap() - cosine(&eb, &ea).unwrap();
            prop_assert!(d.abs() <= 1e-12);
        }
    }
}
