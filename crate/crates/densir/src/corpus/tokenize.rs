//! Hashing-trick tokenizer.
//!
//! Text is lowercased, split on every non-alphanumeric character, and each
//! term is hashed with 64-bit FNV-1a and reduced modulo the vocabulary size.
//! There is no vocabulary file and no out-of-vocabulary token: every term
//! maps to some id in `0..vocab_size`. Collisions are intentional and
//! harmless at the embedding-table sizes used here.
//!
//! The hash is pinned so that token ids are stable across builds and
//! platforms: FNV-1a with offset basis `0xcbf29ce484222325` and prime
//! `0x100000001b3`, applied to the term's UTF-8 bytes.

/// FNV-1a 64-bit offset basis.
pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a 64-bit prime.
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Tokenizes `text` into at most `max_len` hashed token ids in `0..vocab_size`.
///
/// Empty terms produced by runs of separators are dropped; an all-separator
/// or empty `text` yields an empty sequence (callers that need a non-empty
/// sequence must check). Truncation keeps the first `max_len` terms.
///
/// Panics if `vocab_size < 2` — that is a configuration bug, not an input
/// error.
pub fn tokenize(text: &str, max_len: usize, vocab_size: u32) -> Vec<u32> {
    assert!(vocab_size >= 2, "vocab_size must be at least 2");
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|term| !term.is_empty())
        .take(max_len)
        .map(|term| (fnv1a64(term.as_bytes()) % u64::from(vocab_size)) as u32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed by an independent FNV-1a implementation
    // (bytewise xor/multiply over u128 to rule out wrap mistakes).
    fn fnv1a64_oracle(bytes: &[u8]) -> u64 {
        let mut hash: u128 = 0xcbf2_9ce4_8422_2325;
        for &b in bytes {
            hash ^= b as u128;
            hash = (hash * ((1u128 << 40) + (1 << 8) + 0xb3)) & 0xFFFF_FFFF_FFFF_FFFF;
        }
        hash as u64
    }

    #[test]
    fn fnv_matches_published_test_vectors() {
        // Classic vectors for 64-bit FNV-1a.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn fnv_matches_independent_oracle() {
        for s in ["", "a", "ab", "hello world", "Zebra42", "\u{00e9}clair"] {
            assert_eq!(fnv1a64(s.as_bytes()), fnv1a64_oracle(s.as_bytes()), "{s:?}");
        }
    }

    #[test]
    fn lowercases_and_splits_on_non_alphanumeric() {
        let vocab = 1 << 20;
        let a = tokenize("Hello, WORLD!", 16, vocab);
        let b = tokenize("hello world", 16, vocab);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0], (fnv1a64(b"hello") % u64::from(vocab)) as u32);
    }

    #[test]
    fn drops_empty_terms_and_truncates() {
        let toks = tokenize("one---two  three,four", 3, 4096);
        assert_eq!(toks.len(), 3);
        let all = tokenize("one---two  three,four", 16, 4096);
        assert_eq!(all.len(), 4);
        assert_eq!(&all[..3], &toks[..]);
    }

    #[test]
    fn all_separator_text_yields_empty() {
        assert!(tokenize("--- ... !!!", 16, 4096).is_empty());
        assert!(tokenize("", 16, 4096).is_empty());
    }

    #[test]
    fn ids_stay_in_vocab_range() {
        for word in ["alpha", "beta", "gamma", "delta", "w12345"] {
            for &v in &[2u32, 3, 64, 4096] {
                for t in tokenize(word, 8, v) {
                    assert!(t < v);
                }
            }
        }
    }
}
