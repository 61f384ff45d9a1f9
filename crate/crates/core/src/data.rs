//! Normalized examples, label inventories, encoding into network inputs and
//! a seeded synthetic tagging task.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{data_err, usage, Result};
use crate::hash::{splitmix64, SplitMix64};
use crate::mixer::HeadKind;
use crate::projection::Projector;
use crate::train::{EncodedExample, Target, UNSEEN};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Example {
    pub tokens: Vec<String>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub slots: Option<Vec<String>>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub label: Option<String>,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        if let Some(slots) = &self.slots {
            if slots.len() != self.tokens.len() {
                return Err(data_err!("{} slot labels for {} tokens", slots.len(), self.tokens.len()));
            }
        }
        if self.slots.is_none() && self.label.is_none() {
            return Err(data_err!("example has neither slot labels nor a class label"));
        }
        if self.tokens.iter().any(String::is_empty) {
            return Err(data_err!("example contains an empty token"));
        }
        Ok(())
    }
}

/// Sorted, duplicate-free label set with positional indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "Vec<String>", into = "Vec<String>"))]
pub struct LabelInventory {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for LabelInventory {
    fn from(labels: Vec<String>) -> Self {
        Self::new(labels)
    }
}

impl From<LabelInventory> for Vec<String> {
    fn from(inv: LabelInventory) -> Self {
        inv.labels
    }
}

impl LabelInventory {
    pub fn new<I: IntoIterator<Item = String>>(labels: I) -> Self {
        let set: BTreeSet<String> = labels.into_iter().collect();
        let labels: Vec<String> = set.into_iter().collect();
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index }
    }

    /// Slot labels (tagging) or class labels (classification) of a training
    /// split.
    pub fn from_examples(examples: &[Example], head: HeadKind) -> Self {
        if head.is_token() {
            Self::new(examples.iter().filter_map(|e| e.slots.as_ref()).flatten().cloned())
        } else {
            Self::new(examples.iter().filter_map(|e| e.label.clone()))
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Gold labels that were not in the inventory, with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnseenReport {
    pub occurrences: usize,
    pub labels: BTreeMap<String, usize>,
}

impl UnseenReport {
    pub fn is_empty(&self) -> bool {
        self.occurrences == 0
    }
}

/// Projects examples and maps their labels. Labels outside the inventory
/// become [`UNSEEN`] and are tallied in the report.
pub fn encode(
    examples: &[Example],
    projector: &Projector,
    inventory: &LabelInventory,
    head: HeadKind,
) -> Result<(Vec<EncodedExample>, UnseenReport)> {
    let mut report = UnseenReport::default();
    let mut lookup = |label: &str| match inventory.get(label) {
        Some(i) => i,
        None => {
            report.occurrences += 1;
            *report.labels.entry(label.to_string()).or_default() += 1;
            UNSEEN
        }
    };
    let mut targets = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        ex.validate().map_err(|e| data_err!("example {i}: {e}"))?;
        let target = match head {
            HeadKind::TokenLabels { .. } => {
                let slots = ex.slots.as_ref().ok_or_else(|| data_err!("example {i}: tagging model needs slot labels"))?;
                Target::Tokens(slots.iter().map(|s| lookup(s)).collect())
            }
            HeadKind::PooledClass { .. } => {
                let label = ex.label.as_ref().ok_or_else(|| data_err!("example {i}: classifier needs a class label"))?;
                Target::Class(lookup(label))
            }
        };
        targets.push(target);
    }
    let project = |ex: &Example| projector.project(&ex.tokens);
    #[cfg(feature = "parallel")]
    let features: Vec<_> = {
        use rayon::prelude::*;
        examples.par_iter().map(project).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let features: Vec<_> = examples.iter().map(project).collect::<Result<_>>()?;
    let encoded = features.into_iter().zip(targets).map(|(features, target)| EncodedExample { features, target }).collect();
    Ok((encoded, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_examples: usize,
    /// Number of ordinary pseudo-words in the lexicon.
    pub vocab_size: usize,
    /// Inclusive token-count range per example.
    pub min_len: usize,
    pub max_len: usize,
    pub n_labels: usize,
    /// Share of examples held out for validation.
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, n_examples: 5000, vocab_size: 400, min_len: 6, max_len: 24, n_labels: 8, val_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    /// A vocabulary covering every generated word, `[UNK]` first.
    pub vocab: Vec<String>,
    /// Words whose label is copied from the preceding word.
    pub markers: Vec<String>,
}

const MARKER_WORDS: usize = 4;
const MARKER_PROB: f64 = 0.125;
const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "kl", "tr"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_word(rng: &mut SplitMix64) -> String {
    let syllables = 2 + rng.below(3) as usize;
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.below(ONSETS.len() as u64) as usize]);
        w.push_str(NUCLEI[rng.below(NUCLEI.len() as u64) as usize]);
    }
    w
}

pub fn synth_label(k: usize) -> String {
    alloc::format!("L{k}")
}

/// Seeded token-tagging task. Every ordinary word has a fixed label; about
/// one token in ten is a marker word whose label is that of the previous
/// word, so it cannot be predicted from the token alone.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.n_labels < 2 {
        return Err(usage!("synthetic task needs at least two labels"));
    }
    if cfg.min_len < 2 || cfg.max_len < cfg.min_len || cfg.vocab_size == 0 || cfg.n_examples < 2 {
        return Err(usage!("invalid synthetic task shape {cfg:?}"));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(cfg.vocab_size + MARKER_WORDS);
    while words.len() < cfg.vocab_size + MARKER_WORDS {
        let w = pseudo_word(&mut rng);
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let markers = words.split_off(cfg.vocab_size);
    let word_label = |i: usize| (splitmix64(cfg.seed ^ (i as u64).wrapping_mul(0x9e37_79b9)) % cfg.n_labels as u64) as usize;

    let mut examples = Vec::with_capacity(cfg.n_examples);
    for _ in 0..cfg.n_examples {
        let len = cfg.min_len + rng.below((cfg.max_len - cfg.min_len + 1) as u64) as usize;
        let mut tokens = Vec::with_capacity(len);
        let mut slots: Vec<String> = Vec::with_capacity(len);
        let mut prev_marker = true;
        for _ in 0..len {
            if !prev_marker && rng.next_f64() < MARKER_PROB {
                let m = rng.below(MARKER_WORDS as u64) as usize;
                tokens.push(markers[m].clone());
                let copied = slots.last().cloned().expect("markers never open a sequence");
                slots.push(copied);
                prev_marker = true;
            } else {
                let w = rng.below(cfg.vocab_size as u64) as usize;
                tokens.push(words[w].clone());
                slots.push(synth_label(word_label(w)));
                prev_marker = false;
            }
        }
        examples.push(Example { tokens, slots: Some(slots), label: None });
    }
    let n_val = ((cfg.n_examples as f64 * cfg.val_fraction) as usize).clamp(1, cfg.n_examples - 1);
    let val = examples.split_off(cfg.n_examples - n_val);

    let mut vocab = alloc::vec![crate::vocab::DEFAULT_UNK.to_string()];
    vocab.extend(words.iter().cloned());
    vocab.extend(markers.iter().cloned());
    Ok(SynthData { train: examples, val, vocab, markers })
}
