#![allow(dead_code)]

use pnlp_core::hash::SplitMix64;
use pnlp_core::Vocabulary;

const PIECES: &[&str] = &[
    "play",
    "##ing",
    "##ed",
    "##s",
    "the",
    "th",
    "in",
    "##er",
    "book",
    "flight",
    "wake",
    "me",
    "up",
    "##ly",
    "alarm",
    "größe",
    "##ß",
    "नम",
    "##स्ते",
    "สวัส",
    "##ดี",
    "a",
    "at",
];

/// Single letters as head and continuation units so any lowercase ASCII word
/// tokenizes, plus a few longer pieces and non-Latin units.
pub fn fixture_vocab() -> Vocabulary {
    let mut lines = vec!["[UNK]".to_string()];
    for c in 'a'..='z' {
        lines.push(c.to_string());
        lines.push(format!("##{c}"));
    }
    for p in PIECES {
        if !lines.iter().any(|l| l == p) {
            lines.push(p.to_string());
        }
    }
    Vocabulary::from_lines(lines, "[UNK]").unwrap()
}

const ALPHABET: &[char] = &['a', 'b', 'e', 'g', 'i', 'l', 'n', 'o', 'p', 'r', 's', 't', 'y', 'ß', 'ö', 'न', 'म', 'ส', 'ว', '7'];

/// Random token: mostly lowercase ASCII, sometimes with characters the
/// fixture vocabulary cannot cover.
pub fn random_token(rng: &mut SplitMix64) -> String {
    let len = 1 + rng.below(11) as usize;
    let ascii_only = rng.below(4) > 0;
    (0..len)
        .map(|_| if ascii_only { (b'a' + rng.below(26) as u8) as char } else { ALPHABET[rng.below(ALPHABET.len() as u64) as usize] })
        .collect()
}
