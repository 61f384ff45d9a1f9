//! Vocabulary files and the normalized JSONL dataset format.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pnlp_core::data::Example;
use pnlp_core::vocab::DEFAULT_UNK;
use pnlp_core::Vocabulary;

use crate::error::{CliError, Result};

/// One unit per line; a trailing newline is fine, blank lines elsewhere are
/// rejected with their line number.
pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    Vocabulary::from_lines(lines, DEFAULT_UNK).map_err(|e| CliError::file(path, e.to_string()))
}

pub fn write_vocab(path: &Path, units: &[String]) -> Result<()> {
    let mut text = units.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn parse_example(line: &str) -> std::result::Result<Example, String> {
    let ex: Example = serde_json::from_str(line).map_err(|e| e.to_string())?;
    ex.validate().map_err(|e| e.to_string())?;
    Ok(ex)
}

/// Reads one JSON object per line; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = fs::File::open(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_example(&line).map_err(|e| CliError::file(path, format!("line {}: {e}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| CliError::file(path, e.to_string()))?;
        w.write_all(b"\n").map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}
