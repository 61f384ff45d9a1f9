//! Deterministic string hash family and the MinHash primitive.
//!
//! `h_i(s) = splitmix64(fnv1a64(utf8(s)) ^ seed_i)` with
//! `seed_i = splitmix64(i + 1)`. Everything here is bit-exact and portable,
//! so a fingerprint cache built by one implementation can be read by another.

use alloc::vec::Vec;

use crate::error::{usage, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
#[inline]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sequential splitmix64 generator. Used wherever the crate needs seeded
/// randomness (initialization, shuffling, synthetic data).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..bound` (`bound > 0`), via Lemire's multiply-shift.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// `n` hash functions over strings. Two families with the same `n` are equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashFamily {
    seeds: Vec<u64>,
}

impl HashFamily {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(usage!("hash family needs at least one function"));
        }
        Ok(Self { seeds: (0..size as u64).map(|i| splitmix64(i + 1)).collect() })
    }

    pub fn size(&self) -> usize {
        self.seeds.len()
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// `h_i(s)`.
    pub fn hash(&self, i: usize, s: &str) -> Result<u64> {
        let seed = self.seeds.get(i).ok_or_else(|| usage!("hash index {i} out of range for family of size {}", self.size()))?;
        Ok(mix(fnv1a64(s.as_bytes()), *seed))
    }

    /// All `n` hashes of `s` at once; the FNV pass runs a single time.
    pub fn hash_all(&self, s: &str) -> impl Iterator<Item = u64> + '_ {
        let base = fnv1a64(s.as_bytes());
        self.seeds.iter().map(move |&seed| mix(base, seed))
    }
}

#[inline]
fn mix(base: u64, seed: u64) -> u64 {
    splitmix64(base ^ seed)
}

/// Array of `n` MinHash values for one subword unit or token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    pub values: Vec<u64>,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Elementwise minimum, in place.
    pub fn min_assign(&mut self, other: &[u64]) {
        for (a, &b) in self.values.iter_mut().zip(other) {
            *a = (*a).min(b);
        }
    }
}

/// Contiguous windows of three Unicode scalar values. Strings shorter than
/// three scalars come back whole, so the result is never empty.
pub fn char_trigrams(s: &str) -> Result<Vec<&str>> {
    if s.is_empty() {
        return Err(usage!("cannot extract trigrams from an empty string"));
    }
    let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).chain(core::iter::once(s.len())).collect();
    let chars = bounds.len() - 1;
    if chars < 3 {
        return Ok(alloc::vec![s]);
    }
    Ok((0..chars - 2).map(|k| &s[bounds[k]..bounds[k + 3]]).collect())
}

/// Fingerprint of a single subword unit. Continuation units (`##...`) are
/// hashed whole, marker included; head units take the per-function minimum
/// over their trigrams.
pub fn minhash_unit(family: &HashFamily, unit: &str, is_continuation: bool) -> Result<Fingerprint> {
    if unit.is_empty() {
        return Err(usage!("cannot fingerprint an empty subword unit"));
    }
    if is_continuation {
        return Ok(Fingerprint { values: family.hash_all(unit).collect() });
    }
    let mut values = alloc::vec![u64::MAX; family.size()];
    for trigram in char_trigrams(unit)? {
        for (slot, h) in values.iter_mut().zip(family.hash_all(trigram)) {
            *slot = (*slot).min(h);
        }
    }
    Ok(Fingerprint { values })
}

/// The raw hash values MinHash would take the minimum over, for every unit:
/// trigram hashes for head units, whole-unit hashes for continuations.
pub(crate) fn unit_hash_inputs(unit: &str, is_continuation: bool) -> Result<Vec<&str>> {
    if is_continuation {
        if unit.is_empty() {
            return Err(usage!("cannot hash an empty subword unit"));
        }
        Ok(alloc::vec![unit])
    } else {
        char_trigrams(unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), (0xcbf29ce484222325u64 ^ 0x61).wrapping_mul(0x100000001b3));
        assert_eq!(fnv1a64(b"Bri"), 0x16825b19b1284254);
    }

    #[test]
    fn splitmix_known_values() {
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(1), 0x910a2dec89025cc1);
        assert_eq!(splitmix64(12345), splitmix64(12345));
    }

    #[test]
    fn splitmix_neighbours_differ() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..100_000 {
            let x = rng.next_u64();
            assert_ne!(splitmix64(x), splitmix64(x.wrapping_add(1)));
        }
    }

    #[test]
    fn family_seeds_depend_only_on_size() {
        assert_eq!(HashFamily::new(8).unwrap(), HashFamily::new(8).unwrap());
        assert_eq!(HashFamily::new(3).unwrap().seeds()[2], splitmix64(3));
        assert!(HashFamily::new(0).is_err());
    }

    #[test]
    fn hash_index_checked() {
        let f = HashFamily::new(2).unwrap();
        assert!(matches!(f.hash(2, "x"), Err(crate::Error::Usage(_))));
        assert_ne!(f.hash(0, "ing").unwrap(), f.hash(1, "ing").unwrap());
        assert_eq!(f.hash(0, "").unwrap(), splitmix64(fnv1a64(b"") ^ splitmix64(1)));
    }

    #[test]
    fn trigrams() {
        assert_eq!(char_trigrams("Bring").unwrap(), ["Bri", "rin", "ing"]);
        assert_eq!(char_trigrams("abcd").unwrap(), ["abc", "bcd"]);
        assert_eq!(char_trigrams("at").unwrap(), ["at"]);
        assert_eq!(char_trigrams("abc").unwrap(), ["abc"]);
        assert!(char_trigrams("").is_err());
        // scalar values, not bytes
        assert_eq!(char_trigrams("äöüß").unwrap(), ["äöü", "öüß"]);
    }

    #[test]
    fn minhash_head_unit_is_min_over_trigrams() {
        let f = HashFamily::new(16).unwrap();
        let fp = minhash_unit(&f, "Bring", false).unwrap();
        for i in 0..16 {
            let expect = ["Bri", "rin", "ing"].iter().map(|t| f.hash(i, t).unwrap()).min().unwrap();
            assert_eq!(fp.values[i], expect);
        }
    }

    #[test]
    fn minhash_continuation_hashes_whole_unit() {
        let f = HashFamily::new(4).unwrap();
        let fp = minhash_unit(&f, "##ing", true).unwrap();
        for i in 0..4 {
            assert_eq!(fp.values[i], f.hash(i, "##ing").unwrap());
        }
        let single = minhash_unit(&f, "ing", false).unwrap();
        assert_eq!(single.values[0], f.hash(0, "ing").unwrap());
        assert!(minhash_unit(&f, "", false).is_err());
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<u32> = (0..50).collect();
        SplitMix64::new(3).shuffle(&mut v);
        let mut s = v.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
