//! Text-to-feature projection: cached MinHash fingerprints folded into
//! counting Bloom filters, plus the Binary, TSP and SimHash baselines.
//!
//! The model input for a sequence of `s` token slots is a
//! `(2w + 1) * width x s` matrix whose column `t` stacks the features of
//! tokens `t - w ..= t + w`. Out-of-range neighbours and pad columns are zero.
//! The matrix is stored sparsely (per-token features only) and columns are
//! assembled on demand.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, data_err, usage, Result};
use crate::hash::{minhash_unit, unit_hash_inputs, Fingerprint, HashFamily};
use crate::vocab::{is_continuation, SubwordUnit, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProjectionKind {
    #[default]
    MinHash,
    Binary,
    Tsp,
    SimHash,
}

impl ProjectionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::MinHash => "minhash",
            Self::Binary => "binary",
            Self::Tsp => "tsp",
            Self::SimHash => "simhash",
        }
    }
}

impl core::str::FromStr for ProjectionKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minhash" => Ok(Self::MinHash),
            "binary" => Ok(Self::Binary),
            "tsp" => Ok(Self::Tsp),
            "simhash" => Ok(Self::SimHash),
            other => Err(config_err!("unknown projection kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ProjectionConfig {
    pub kind: ProjectionKind,
    /// Number of hash functions (`n`).
    pub n_hashes: usize,
    /// Token feature size (`m`).
    pub feature_size: usize,
    /// Neighbours concatenated on each side (`w`).
    pub window: usize,
    /// Maximum sequence length (`s`).
    pub max_seq_len: usize,
    /// SimHash histogram length (`l`); ignored by the other kinds.
    #[cfg_attr(feature = "serde", serde(default = "default_simhash_bits"))]
    pub simhash_bits: usize,
}

#[cfg(feature = "serde")]
fn default_simhash_bits() -> usize {
    64
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { kind: ProjectionKind::MinHash, n_hashes: 64, feature_size: 1024, window: 1, max_seq_len: 64, simhash_bits: 64 }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hashes == 0 || self.feature_size == 0 || self.max_seq_len == 0 {
            return Err(config_err!("n_hashes, feature_size and max_seq_len must all be at least 1"));
        }
        if !(1..=64).contains(&self.simhash_bits) {
            return Err(config_err!("simhash_bits must lie in 1..=64, got {}", self.simhash_bits));
        }
        if self.kind == ProjectionKind::Tsp && !self.feature_size.is_multiple_of(2) {
            return Err(config_err!("tsp projection needs an even feature_size, got {}", self.feature_size));
        }
        Ok(())
    }

    /// Length of one token's feature vector.
    pub fn token_width(&self) -> usize {
        match self.kind {
            ProjectionKind::SimHash => self.simhash_bits,
            _ => self.feature_size,
        }
    }

    /// Rows of the projected matrix, `(2w + 1) * token_width`.
    pub fn input_rows(&self) -> usize {
        (2 * self.window + 1) * self.token_width()
    }
}

/// Storage width of cached fingerprint entries. The 32-bit mode keeps the low
/// half of every value, applied identically when building and when hashing
/// directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HashWidth {
    W32,
    #[default]
    W64,
}

impl HashWidth {
    pub fn bits(self) -> u8 {
        match self {
            Self::W32 => 32,
            Self::W64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Self::W32),
            64 => Ok(Self::W64),
            other => Err(config_err!("hash width must be 32 or 64, got {other}")),
        }
    }

    #[inline]
    pub fn apply(self, v: u64) -> u64 {
        match self {
            Self::W32 => v & 0xffff_ffff,
            Self::W64 => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Table {
    W32(Vec<u32>),
    W64(Vec<u64>),
}

/// Precomputed fingerprints, one row per vocabulary unit in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintCache {
    n_hashes: usize,
    rows: usize,
    table: Table,
}

impl FingerprintCache {
    pub fn build(vocab: &Vocabulary, family: &HashFamily, width: HashWidth) -> Result<Self> {
        let n = family.size();
        let units: Vec<&str> = vocab.units().collect();
        let row = |unit: &str| minhash_unit(family, unit, is_continuation(unit));

        #[cfg(feature = "parallel")]
        let fps: Vec<Fingerprint> = {
            use rayon::prelude::*;
            units.par_iter().map(|u| row(u)).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let fps: Vec<Fingerprint> = units.iter().map(|u| row(u)).collect::<Result<_>>()?;

        let flat = fps.iter().flat_map(|fp| fp.values.iter().copied());
        let table = match width {
            HashWidth::W32 => Table::W32(flat.map(|v| v as u32).collect()),
            HashWidth::W64 => Table::W64(flat.collect()),
        };
        Ok(Self { n_hashes: n, rows: units.len(), table })
    }

    /// Rebuilds a cache from a raw row-major table (e.g. read from disk).
    pub fn from_raw_u64(rows: usize, n_hashes: usize, values: Vec<u64>) -> Result<Self> {
        if values.len() != rows * n_hashes {
            return Err(data_err!("cache table holds {} values, expected {rows} x {n_hashes}", values.len()));
        }
        Ok(Self { n_hashes, rows, table: Table::W64(values) })
    }

    pub fn from_raw_u32(rows: usize, n_hashes: usize, values: Vec<u32>) -> Result<Self> {
        if values.len() != rows * n_hashes {
            return Err(data_err!("cache table holds {} values, expected {rows} x {n_hashes}", values.len()));
        }
        Ok(Self { n_hashes, rows, table: Table::W32(values) })
    }

    pub fn n_hashes(&self) -> usize {
        self.n_hashes
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> HashWidth {
        match self.table {
            Table::W32(_) => HashWidth::W32,
            Table::W64(_) => HashWidth::W64,
        }
    }

    /// Bytes occupied by the table itself.
    pub fn table_bytes(&self) -> usize {
        match &self.table {
            Table::W32(t) => t.len() * 4,
            Table::W64(t) => t.len() * 8,
        }
    }

    pub fn raw_u64(&self) -> Option<&[u64]> {
        match &self.table {
            Table::W64(t) => Some(t),
            Table::W32(_) => None,
        }
    }

    pub fn raw_u32(&self) -> Option<&[u32]> {
        match &self.table {
            Table::W32(t) => Some(t),
            Table::W64(_) => None,
        }
    }

    /// Row `id` as widened values.
    pub fn row(&self, id: u32) -> Result<Fingerprint> {
        let mut fp = Fingerprint { values: alloc::vec![u64::MAX; self.n_hashes] };
        self.min_into(id, &mut fp)?;
        Ok(fp)
    }

    fn min_into(&self, id: u32, fp: &mut Fingerprint) -> Result<()> {
        let id = id as usize;
        if id >= self.rows {
            return Err(usage!("subword id {id} outside the cached vocabulary of {} units", self.rows));
        }
        let span = id * self.n_hashes..(id + 1) * self.n_hashes;
        match &self.table {
            Table::W64(t) => fp.min_assign(&t[span]),
            Table::W32(t) => {
                for (a, &b) in fp.values.iter_mut().zip(&t[span]) {
                    *a = (*a).min(u64::from(b));
                }
            }
        }
        Ok(())
    }

    /// Token fingerprint as the elementwise minimum of the units' cached rows.
    /// Touches no strings.
    pub fn token_fingerprint(&self, units: &[SubwordUnit]) -> Result<Fingerprint> {
        if units.is_empty() {
            return Err(usage!("a token needs at least one subword unit"));
        }
        let mut fp = Fingerprint { values: alloc::vec![u64::MAX; self.n_hashes] };
        for unit in units {
            self.min_into(unit.id, &mut fp)?;
        }
        Ok(fp)
    }
}

/// Token fingerprint computed from the unit strings, bypassing any cache.
pub fn direct_token_fingerprint(units: &[SubwordUnit], family: &HashFamily, width: HashWidth) -> Result<Fingerprint> {
    if units.is_empty() {
        return Err(usage!("a token needs at least one subword unit"));
    }
    let mut fp = Fingerprint { values: alloc::vec![u64::MAX; family.size()] };
    for unit in units {
        let unit_fp = minhash_unit(family, &unit.text, unit.is_continuation)?;
        for (a, b) in fp.values.iter_mut().zip(unit_fp.values) {
            *a = (*a).min(width.apply(b));
        }
    }
    Ok(fp)
}

/// Per-token feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeature {
    pub counters: Vec<f32>,
}

impl TokenFeature {
    fn zeros(len: usize) -> Self {
        Self { counters: alloc::vec![0.0; len] }
    }

    fn sparse(&self) -> Vec<(u32, f32)> {
        self.counters.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, &v)| (i as u32, v)).collect()
    }
}

/// Counting Bloom filter over the fingerprint: one increment per value at
/// `value mod m`.
pub fn counting_feature(fp: &Fingerprint, m: usize) -> Result<TokenFeature> {
    if m == 0 {
        return Err(usage!("feature size must be at least 1"));
    }
    let mut f = TokenFeature::zeros(m);
    for &v in &fp.values {
        f.counters[(v % m as u64) as usize] += 1.0;
    }
    Ok(f)
}

/// Bitmap of `h_i(unit) mod m` over every unit and every hash function.
pub fn binary_feature(units: &[SubwordUnit], family: &HashFamily, m: usize) -> Result<TokenFeature> {
    if m == 0 {
        return Err(usage!("feature size must be at least 1"));
    }
    let mut f = TokenFeature::zeros(m);
    for unit in units {
        for h in family.hash_all(&unit.text) {
            f.counters[(h % m as u64) as usize] = 1.0;
        }
    }
    Ok(f)
}

/// Ternary feature from bit pairs of the binary feature:
/// `00 -> 0`, `01 -> +1`, `10 -> -1`, `11 -> 0`, zero-padded back to `m`.
pub fn tsp_feature(units: &[SubwordUnit], family: &HashFamily, m: usize) -> Result<TokenFeature> {
    if !m.is_multiple_of(2) {
        return Err(config_err!("tsp projection needs an even feature size, got {m}"));
    }
    let bits = binary_feature(units, family, m)?;
    let mut f = TokenFeature::zeros(m);
    for (k, pair) in bits.counters.chunks_exact(2).enumerate() {
        f.counters[k] = match (pair[0] != 0.0, pair[1] != 0.0) {
            (false, true) => 1.0,
            (true, false) => -1.0,
            _ => 0.0,
        };
    }
    Ok(f)
}

/// Sign of a `+1/-1` bit histogram over every hash MinHash would consider.
/// Ties (`phi_p == 0`) map to 1.
pub fn simhash_feature(units: &[SubwordUnit], family: &HashFamily, bits: usize) -> Result<TokenFeature> {
    if !(1..=64).contains(&bits) {
        return Err(usage!("simhash length must lie in 1..=64, got {bits}"));
    }
    let mut histogram = alloc::vec![0i64; bits];
    for unit in units {
        for input in unit_hash_inputs(&unit.text, unit.is_continuation)? {
            for h in family.hash_all(input) {
                simhash_accumulate(&mut histogram, h);
            }
        }
    }
    Ok(simhash_finish(&histogram))
}

fn simhash_accumulate(histogram: &mut [i64], h: u64) {
    for (p, slot) in histogram.iter_mut().enumerate() {
        *slot += if (h >> p) & 1 == 1 { 1 } else { -1 };
    }
}

fn simhash_finish(histogram: &[i64]) -> TokenFeature {
    TokenFeature { counters: histogram.iter().map(|&phi| if phi >= 0 { 1.0 } else { 0.0 }).collect() }
}

/// Projected model input for one sequence. Only the per-token features of the
/// `valid_len` real tokens are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    token_width: usize,
    window: usize,
    cols: usize,
    tokens: Vec<Vec<(u32, f32)>>,
}

impl FeatureMatrix {
    /// Assembles a matrix from per-token sparse features (sorted by index).
    pub fn from_token_features(token_width: usize, window: usize, cols: usize, tokens: Vec<Vec<(u32, f32)>>) -> Result<Self> {
        if tokens.len() > cols {
            return Err(usage!("{} tokens exceed the {cols} available columns", tokens.len()));
        }
        if tokens.iter().flatten().any(|&(i, _)| i as usize >= token_width) {
            return Err(usage!("token feature index outside width {token_width}"));
        }
        Ok(Self { token_width, window, cols, tokens })
    }

    pub fn rows(&self) -> usize {
        (2 * self.window + 1) * self.token_width
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn valid_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn token_width(&self) -> usize {
        self.token_width
    }

    pub fn token_features(&self) -> &[Vec<(u32, f32)>] {
        &self.tokens
    }

    /// Non-zero entries of column `t` as `(row, value)`, in increasing row
    /// order. Pad columns are empty.
    pub fn column(&self, t: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let w = self.window as isize;
        let width = self.token_width;
        let live = t < self.tokens.len();
        (-w..=w)
            .filter(move |_| live)
            .enumerate()
            .filter_map(move |(block, offset)| {
                let j = t as isize + offset;
                (j >= 0 && (j as usize) < self.tokens.len()).then_some((block, j as usize))
            })
            .flat_map(move |(block, j)| self.tokens[j].iter().map(move |&(i, v)| (block * width + i as usize, v)))
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.column(col).find(|&(r, _)| r == row).map_or(0.0, |(_, v)| v)
    }

    /// Dense row-major `rows x cols` copy.
    pub fn to_dense(&self) -> Vec<f32> {
        let cols = self.cols;
        let mut out = alloc::vec![0.0; self.rows() * cols];
        for t in 0..self.valid_len() {
            for (r, v) in self.column(t) {
                out[r * cols + t] = v;
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        (0..self.valid_len()).map(|t| self.column(t).count()).sum()
    }
}

/// Everything needed to turn token strings into a [`FeatureMatrix`].
#[derive(Debug, Clone)]
pub struct Projector {
    vocab: Vocabulary,
    family: HashFamily,
    cache: Option<FingerprintCache>,
    width: HashWidth,
    config: ProjectionConfig,
}

impl Projector {
    /// Without a cache, MinHash fingerprints are recomputed from strings.
    pub fn new(vocab: Vocabulary, cache: Option<FingerprintCache>, config: ProjectionConfig) -> Result<Self> {
        config.validate()?;
        let family = HashFamily::new(config.n_hashes)?;
        let mut width = HashWidth::W64;
        if let Some(cache) = &cache {
            if cache.rows() != vocab.len() {
                return Err(config_err!("cache has {} rows but the vocabulary has {} units", cache.rows(), vocab.len()));
            }
            if cache.n_hashes() != config.n_hashes {
                return Err(config_err!("cache was built with {} hashes, config asks for {}", cache.n_hashes(), config.n_hashes));
            }
            width = cache.width();
        }
        Ok(Self { vocab, family, cache, width, config })
    }

    pub fn with_cache(vocab: Vocabulary, config: ProjectionConfig, width: HashWidth) -> Result<Self> {
        let family = HashFamily::new(config.n_hashes)?;
        let cache = FingerprintCache::build(&vocab, &family, width)?;
        Self::new(vocab, Some(cache), config)
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn cache(&self) -> Option<&FingerprintCache> {
        self.cache.as_ref()
    }

    pub fn token_units(&self, token: &str) -> Result<Vec<SubwordUnit>> {
        if token.is_empty() {
            return Err(data_err!("empty token"));
        }
        self.vocab.tokenize_word(token)
    }

    pub fn token_fingerprint(&self, units: &[SubwordUnit]) -> Result<Fingerprint> {
        match &self.cache {
            Some(cache) => cache.token_fingerprint(units),
            None => direct_token_fingerprint(units, &self.family, self.width),
        }
    }

    pub fn token_feature(&self, token: &str) -> Result<TokenFeature> {
        let units = self.token_units(token)?;
        let cfg = &self.config;
        match cfg.kind {
            ProjectionKind::MinHash => counting_feature(&self.token_fingerprint(&units)?, cfg.feature_size),
            ProjectionKind::Binary => binary_feature(&units, &self.family, cfg.feature_size),
            ProjectionKind::Tsp => tsp_feature(&units, &self.family, cfg.feature_size),
            ProjectionKind::SimHash => simhash_feature(&units, &self.family, cfg.simhash_bits),
        }
    }

    /// Projects a token sequence, truncating to the first `max_seq_len`
    /// tokens.
    pub fn project<S: AsRef<str>>(&self, tokens: &[S]) -> Result<FeatureMatrix> {
        let keep = tokens.len().min(self.config.max_seq_len);
        let features = tokens[..keep].iter().map(|t| self.token_feature(t.as_ref()).map(|f| f.sparse())).collect::<Result<Vec<_>>>()?;
        FeatureMatrix::from_token_features(self.config.token_width(), self.config.window, self.config.max_seq_len, features)
    }
}

/// Human-readable summary for logs.
pub fn describe(cfg: &ProjectionConfig) -> String {
    alloc::format!(
        "{} n={} m={} w={} s={} rows={}",
        cfg.kind.name(),
        cfg.n_hashes,
        cfg.feature_size,
        cfg.window,
        cfg.max_seq_len,
        cfg.input_rows()
    )
}
