//! Converters from raw benchmark dumps to the normalized JSONL format.
//!
//! Column positions come from a user-supplied field map (TOML), since the
//! layout differs between releases. Rows that cannot be parsed at all are
//! errors; rows whose annotation does not line up with the tokens are
//! skipped and reported.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use pnlp_core::data::Example;
use pnlp_core::vocab::pre_tokenize;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotFormat {
    /// `start:end:LABEL` character spans over the utterance, comma separated.
    #[default]
    Spans,
    /// One whitespace-separated label per token.
    Tags,
}

/// Field map for MTOP-style TSV files. Column indices are 0-based.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MtopFields {
    /// Raw utterance; needed for span annotations unless `tokens` carries
    /// character offsets.
    #[serde(default)]
    pub utterance: Option<usize>,
    /// Either a JSON object with `tokens` (and optionally `tokenSpans`) or a
    /// whitespace-separated token list. Without it the utterance is split.
    #[serde(default)]
    pub tokens: Option<usize>,
    pub slots: usize,
    #[serde(default)]
    pub slot_format: SlotFormat,
    #[serde(default)]
    pub header: bool,
    #[serde(default = "default_outside")]
    pub outside: String,
}

fn default_outside() -> String {
    "O".into()
}

/// Field map for multiATIS-style TSV files.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtisFields {
    pub utterance: usize,
    pub intent: usize,
    #[serde(default)]
    pub header: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ImportSummary {
    pub examples: usize,
    pub skipped: usize,
    pub labels: usize,
    #[serde(skip)]
    pub skipped_rows: Vec<(usize, String)>,
}

pub fn read_field_map<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

enum Row {
    Keep(Example),
    Skip(String),
}

fn column<'a>(cols: &[&'a str], i: usize, row: usize) -> std::result::Result<&'a str, String> {
    cols.get(i).copied().ok_or_else(|| format!("row {row}: has {} columns, field map needs column {i}", cols.len()))
}

fn rows(text: &str, header: bool) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .skip(usize::from(header))
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l).split('\t').collect()))
}

fn finish(results: Vec<(usize, Row)>, label_of: impl Fn(&Example) -> Vec<String>) -> (Vec<Example>, ImportSummary) {
    let mut examples = Vec::new();
    let mut summary = ImportSummary::default();
    let mut labels = BTreeSet::new();
    for (row, r) in results {
        match r {
            Row::Keep(ex) => {
                labels.extend(label_of(&ex));
                examples.push(ex);
            }
            Row::Skip(reason) => summary.skipped_rows.push((row, reason)),
        }
    }
    summary.examples = examples.len();
    summary.skipped = summary.skipped_rows.len();
    summary.labels = labels.len();
    (examples, summary)
}

/// Character offsets `[start, end)` of each token inside `utterance`,
/// located left to right.
fn locate(utterance: &str, tokens: &[String]) -> Option<Vec<(usize, usize)>> {
    let mut spans = Vec::with_capacity(tokens.len());
    let mut byte = 0;
    for t in tokens {
        let at = byte + utterance[byte..].find(t.as_str())?;
        let start = utterance[..at].chars().count();
        spans.push((start, start + t.chars().count()));
        byte = at + t.len();
    }
    Some(spans)
}

type TokenCell = (Vec<String>, Option<Vec<(usize, usize)>>);

fn parse_tokens_cell(cell: &str, row: usize) -> std::result::Result<TokenCell, String> {
    let trimmed = cell.trim();
    if !trimmed.starts_with('{') {
        return Ok((trimmed.split_whitespace().map(String::from).collect(), None));
    }
    #[derive(Deserialize)]
    struct Span {
        start: usize,
        length: usize,
    }
    #[derive(Deserialize)]
    struct Cell {
        tokens: Vec<String>,
        #[serde(default, rename = "tokenSpans")]
        token_spans: Option<Vec<Span>>,
    }
    let c: Cell = serde_json::from_str(trimmed).map_err(|e| format!("row {row}: tokens column is not valid JSON: {e}"))?;
    let spans = c.token_spans.map(|s| s.iter().map(|s| (s.start, s.start + s.length)).collect());
    Ok((c.tokens, spans))
}

fn parse_spans(cell: &str, row: usize) -> std::result::Result<Vec<(usize, usize, String)>, String> {
    let mut out = Vec::new();
    for part in cell.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let mut it = part.splitn(3, ':');
        let (s, e, label) = (it.next(), it.next(), it.next());
        let parsed = match (s.map(str::parse::<usize>), e.map(str::parse::<usize>), label) {
            (Some(Ok(s)), Some(Ok(e)), Some(label)) if s <= e && !label.is_empty() => (s, e, label.to_string()),
            _ => return Err(format!("row {row}: malformed slot span `{part}`")),
        };
        out.push(parsed);
    }
    Ok(out)
}

fn mtop_row(cols: &[&str], f: &MtopFields, row: usize) -> std::result::Result<Row, String> {
    let utterance = f.utterance.map(|i| column(cols, i, row)).transpose()?;
    let (tokens, offsets) = match f.tokens {
        Some(i) => parse_tokens_cell(column(cols, i, row)?, row)?,
        None => {
            let u = utterance.ok_or_else(|| "field map needs `tokens` or `utterance`".to_string())?;
            (pre_tokenize(u).into_iter().map(String::from).collect(), None)
        }
    };
    if tokens.is_empty() {
        return Ok(Row::Skip("no tokens".into()));
    }
    let slot_cell = column(cols, f.slots, row)?;
    let slots = match f.slot_format {
        SlotFormat::Tags => {
            let tags: Vec<String> = slot_cell.split_whitespace().map(String::from).collect();
            if tags.len() != tokens.len() {
                return Ok(Row::Skip(format!("{} tags for {} tokens", tags.len(), tokens.len())));
            }
            tags
        }
        SlotFormat::Spans => {
            let spans = parse_spans(slot_cell, row)?;
            let offsets = match (offsets, utterance) {
                (Some(o), _) => o,
                (None, Some(u)) => match locate(u, &tokens) {
                    Some(o) => o,
                    None => return Ok(Row::Skip("tokens cannot be aligned with the utterance".into())),
                },
                (None, None) => return Err("span annotations need `utterance` or token offsets".into()),
            };
            if offsets.len() != tokens.len() {
                return Ok(Row::Skip(format!("{} token offsets for {} tokens", offsets.len(), tokens.len())));
            }
            let end = offsets.iter().map(|o| o.1).max().unwrap_or(0);
            if spans.iter().any(|&(_, e, _)| e > end) {
                return Ok(Row::Skip("slot span extends past the last token".into()));
            }
            offsets
                .iter()
                .map(|&(ts, te)| spans.iter().find(|(s, e, _)| ts < *e && *s < te).map_or_else(|| f.outside.clone(), |(_, _, l)| l.clone()))
                .collect()
        }
    };
    Ok(Row::Keep(Example { tokens, slots: Some(slots), label: None }))
}

pub fn import_mtop(raw: &Path, fields: &MtopFields) -> Result<(Vec<Example>, ImportSummary)> {
    let text = fs::read_to_string(raw).map_err(CliError::io(raw))?;
    let results = rows(&text, fields.header)
        .map(|(row, cols)| mtop_row(&cols, fields, row).map(|r| (row, r)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::file(raw, e))?;
    Ok(finish(results, |ex| ex.slots.clone().unwrap_or_default()))
}

fn atis_row(cols: &[&str], f: &AtisFields, row: usize) -> std::result::Result<Row, String> {
    let utterance = column(cols, f.utterance, row)?;
    let intent = column(cols, f.intent, row)?.trim();
    let tokens: Vec<String> = pre_tokenize(utterance).into_iter().map(String::from).collect();
    if tokens.is_empty() {
        return Ok(Row::Skip("empty utterance".into()));
    }
    if intent.is_empty() {
        return Ok(Row::Skip("empty intent".into()));
    }
    Ok(Row::Keep(Example { tokens, slots: None, label: Some(intent.to_string()) }))
}

pub fn import_multiatis(raw: &Path, fields: &AtisFields) -> Result<(Vec<Example>, ImportSummary)> {
    let text = fs::read_to_string(raw).map_err(CliError::io(raw))?;
    let results = rows(&text, fields.header)
        .map(|(row, cols)| atis_row(&cols, fields, row).map(|r| (row, r)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::file(raw, e))?;
    Ok(finish(results, |ex| ex.label.iter().cloned().collect()))
}
