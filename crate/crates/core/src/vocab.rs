//! Subword vocabulary and greedy longest-match WordPiece tokenization.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const CONTINUATION_MARKER: &str = "##";
pub const DEFAULT_UNK: &str = "[UNK]";

/// One piece of a tokenized word, with its vocabulary row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordUnit {
    pub text: String,
    pub is_continuation: bool,
    pub id: u32,
}

/// Ordered, duplicate-free list of subword units. Position is identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    units: Vec<String>,
    index: BTreeMap<String, u32>,
    unk_id: u32,
}

impl Vocabulary {
    /// Builds a vocabulary from lines in file order. Errors carry the 1-based
    /// line number of the offending entry.
    pub fn from_lines<I, S>(lines: I, unk_token: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut units = Vec::new();
        let mut index = BTreeMap::new();
        for (lineno, line) in lines.into_iter().enumerate() {
            let unit = line.as_ref().trim_end_matches(['\r', '\n']);
            if unit.is_empty() {
                return Err(Error::Vocab { line: lineno + 1, message: "empty entry".to_string() });
            }
            if let Some(&first) = index.get(unit) {
                return Err(Error::Vocab {
                    line: lineno + 1,
                    message: alloc::format!("duplicate unit `{unit}` (first seen on line {})", first + 1),
                });
            }
            index.insert(unit.to_string(), units.len() as u32);
            units.push(unit.to_string());
        }
        let unk_id = *index.get(unk_token).ok_or_else(|| Error::Vocab {
            line: units.len() + 1,
            message: alloc::format!("unknown-token entry `{unk_token}` not found"),
        })?;
        Ok(Self { units, index, unk_id })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn get(&self, unit: &str) -> Option<u32> {
        self.index.get(unit).copied()
    }

    pub fn unit(&self, id: u32) -> Option<&str> {
        self.units.get(id as usize).map(String::as_str)
    }

    pub fn units(&self) -> impl ExactSizeIterator<Item = &str> {
        self.units.iter().map(String::as_str)
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn unk_token(&self) -> &str {
        &self.units[self.unk_id as usize]
    }

    fn make_unit(&self, id: u32) -> SubwordUnit {
        let text = self.units[id as usize].clone();
        SubwordUnit { is_continuation: is_continuation(&text), text, id }
    }

    /// Greedy longest-match-first WordPiece. A word that cannot be covered
    /// entirely maps to the single unknown unit.
    pub fn tokenize_word(&self, word: &str) -> Result<Vec<SubwordUnit>> {
        if word.is_empty() {
            return Err(Error::Usage("cannot tokenize an empty word".to_string()));
        }
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain(core::iter::once(word.len())).collect();
        let mut pieces = Vec::new();
        let mut candidate = String::new();
        let mut start = 0;
        while start < word.len() {
            let mut found = None;
            for &end in bounds.iter().rev().take_while(|&&e| e > start) {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_MARKER);
                }
                candidate.push_str(&word[start..end]);
                if let Some(id) = self.get(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push(self.make_unit(id));
                    start = end;
                }
                None => return Ok(alloc::vec![self.make_unit(self.unk_id)]),
            }
        }
        Ok(pieces)
    }
}

pub fn is_continuation(unit: &str) -> bool {
    unit.starts_with(CONTINUATION_MARKER) && unit.len() > CONTINUATION_MARKER.len()
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1..=0x00BF
            | 0x00D7 | 0x00F7
            | 0x0964..=0x0965 // devanagari danda
            | 0x0E2F | 0x0E46 | 0x0E4F | 0x0E5A..=0x0E5B // thai
            | 0x2000..=0x206F
            | 0x3000..=0x303F
            | 0xFF01..=0xFF0F | 0xFF1A..=0xFF20 | 0xFF3B..=0xFF40 | 0xFF5B..=0xFF65)
            && !c.is_whitespace()
}

/// Splits raw text on whitespace and isolates punctuation characters.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    out.push(&chunk[start..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            out.push(&chunk[start..]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vocabulary {
        Vocabulary::from_lines(["[UNK]", "Bring", "##ing", "the", "B", "##r", "##i", "##n", "##g", "it", "!"], DEFAULT_UNK).unwrap()
    }

    fn texts(units: &[SubwordUnit]) -> Vec<&str> {
        units.iter().map(|u| u.text.as_str()).collect()
    }

    #[test]
    fn loads_in_order() {
        let v = Vocabulary::from_lines(["[UNK]", "Bring", "##ing", "the"], DEFAULT_UNK).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.get("##ing"), Some(2));
        assert_eq!(v.unit(3), Some("the"));
        assert_eq!(v.unk_token(), "[UNK]");
    }

    #[test]
    fn duplicate_is_reported_with_line() {
        let err = Vocabulary::from_lines(["[UNK]", "a", "b", "a"], DEFAULT_UNK).unwrap_err();
        match err {
            Error::Vocab { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("`a`"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_unk_is_an_error() {
        assert!(matches!(Vocabulary::from_lines(["a", "b"], DEFAULT_UNK), Err(Error::Vocab { .. })));
    }

    #[test]
    fn wordpiece_examples() {
        let v = small();
        assert_eq!(texts(&v.tokenize_word("Bringing").unwrap()), ["Bring", "##ing"]);
        assert_eq!(texts(&v.tokenize_word("the").unwrap()), ["the"]);
        assert_eq!(texts(&v.tokenize_word("Brig").unwrap()), ["B", "##r", "##i", "##g"]);
        assert_eq!(texts(&v.tokenize_word("Bringé").unwrap()), ["[UNK]"]);
        assert!(v.tokenize_word("").is_err());
        let units = v.tokenize_word("Bringing").unwrap();
        assert!(!units[0].is_continuation && units[1].is_continuation);
        assert_eq!(units[1].id, 2);
    }

    #[test]
    fn pre_tokenize_rules() {
        assert_eq!(pre_tokenize("Bring it!"), ["Bring", "it", "!"]);
        assert!(pre_tokenize("").is_empty());
        assert_eq!(pre_tokenize("a,b"), ["a", ",", "b"]);
        assert_eq!(pre_tokenize("  wake\tme  up… "), ["wake", "me", "up", "…"]);
        assert_eq!(pre_tokenize("नमस्ते।"), ["नमस्ते", "।"]);
    }
}
