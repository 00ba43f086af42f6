//! Corpus and TSV ingestion. Errors name the offending file and line.

use std::path::Path;

use anyhow::{bail, Context, Result};
use monopara::evalsuite::Labeled;
use monopara::seqcoder::{TokenSequence, Vocabulary};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Non-empty lines of a one-sentence-per-line corpus.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn encode_all(vocab: &Vocabulary, lines: &[String], max_len: usize) -> Result<Vec<TokenSequence>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| vocab.encode(l, Some(max_len)).with_context(|| format!("sentence {}", i + 1)))
        .collect()
}

/// Rows of a tab-separated file with `min..=max` fields; blank lines are
/// skipped and `#` lines are comments.
pub fn read_tsv(path: &Path, min: usize, max: usize) -> Result<Vec<Vec<String>>> {
    let text = read_text(path)?;
    parse_tsv(&text, min, max).with_context(|| format!("in {}", path.display()))
}

pub fn parse_tsv(text: &str, min: usize, max: usize) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() < min || fields.len() > max {
            let want = if min == max { min.to_string() } else { format!("{min} to {max}") };
            bail!("line {}: expected {want} tab-separated fields, found {}", i + 1, fields.len());
        }
        if fields[..min].iter().any(|f| f.trim().is_empty()) {
            bail!("line {}: empty field", i + 1);
        }
        rows.push(fields);
    }
    Ok(rows)
}

/// A sentence pair with an optional label or score in the third column.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub x: String,
    pub y: String,
    pub value: Option<f64>,
}

pub fn read_pairs(path: &Path) -> Result<Vec<Pair>> {
    let text = read_text(path)?;
    parse_pairs(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse_pairs(text: &str) -> Result<Vec<Pair>> {
    let rows = parse_tsv(text, 2, 3)?;
    // line numbers for value errors come from a second pass over the text
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, _)| i + 1)
        .collect();
    rows.into_iter()
        .zip(lines)
        .map(|(f, line)| {
            let value = match f.get(2) {
                Some(v) => Some(v.trim().parse::<f64>().with_context(|| format!("line {line}: bad value {v:?}"))?),
                None => None,
            };
            Ok(Pair { x: f[0].clone(), y: f[1].clone(), value })
        })
        .collect()
}

/// Pairs whose third column is present; `what` names it in errors.
pub fn require_values(pairs: &[Pair], what: &str) -> Result<Vec<f64>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| p.value.with_context(|| format!("pair {} has no {what}", i + 1)))
        .collect()
}

pub fn read_labeled(path: &Path) -> Result<Vec<Labeled>> {
    Ok(read_tsv(path, 2, 2)?.into_iter().map(|f| Labeled::new(f[0].clone(), f[1].clone())).collect())
}

pub fn write_labeled(out: &mut dyn std::io::Write, rows: &[Labeled]) -> Result<()> {
    for r in rows {
        writeln!(out, "{}\t{}", r.label, r.text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_row_names_its_line() {
        let err = parse_pairs("a b\tc d\n\nonly one field\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 3"), "{err:#}");
        let err = parse_pairs("a\tb\tnot-a-number\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 1"), "{err:#}");
    }

    #[test]
    fn empty_input_gives_no_rows() {
        assert!(parse_pairs("").unwrap().is_empty());
        assert!(parse_tsv("\n# comment\n", 2, 2).unwrap().is_empty());
    }

    #[test]
    fn optional_third_column() {
        let p = parse_pairs("a\tb\n# note\nc\td\t0.5\n").unwrap();
        assert_eq!(p[0].value, None);
        assert_eq!(p[1].value, Some(0.5));
        assert!(require_values(&p, "label").is_err());
    }
}
