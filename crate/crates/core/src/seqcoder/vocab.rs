use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    #[default]
    Word,
    Char,
}

/// An integer-coded sentence together with the text it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    kind: TokenizerKind,
}

impl Vocabulary {
    fn from_tokens(corpus_tokens: Vec<String>, kind: TokenizerKind) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for t in corpus_tokens {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::Data(format!("invalid vocabulary entry {t:?}")));
            }
            if index.contains_key(&t) {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
            index.insert(t.clone(), tokens.len() as u32);
            tokens.push(t);
        }
        Ok(Self { tokens, index, kind })
    }

    /// Builds a vocabulary from corpus lines, keeping tokens seen at least
    /// `min_count` times, most frequent first (ties in lexical order).
    pub fn build<'a>(
        lines: impl IntoIterator<Item = &'a str>,
        kind: TokenizerKind,
        min_count: usize,
    ) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in lines {
            for t in split(line, kind) {
                if !RESERVED.contains(&t.as_str()) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut entries: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(entries.into_iter().map(|(t, _)| t).collect(), kind)
    }

    /// Reads one token per line; line `i` (0-based) gets id `i + 4`.
    pub fn read(reader: impl BufRead, kind: TokenizerKind) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let t = line.strip_suffix('\r').unwrap_or(&line);
            tokens.push(t.to_string());
        }
        Self::from_tokens(tokens, kind)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for t in &self.tokens[RESERVED.len()..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn id(&self, token: &str) -> u32 {
        if RESERVED.contains(&token) {
            return UNK;
        }
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    /// Tokenizes `text`, truncating on the right to `max_len` tokens when given.
    pub fn encode(&self, text: &str, max_len: Option<usize>) -> Result<TokenSequence> {
        let mut ids: Vec<u32> = split(text, self.kind).iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            return Err(Error::Empty(format!("no tokens in {text:?}")));
        }
        if let Some(max) = max_len {
            if ids.len() > max {
                log::warn!("truncating input of {} tokens to {max}", ids.len());
                ids.truncate(max);
            }
        }
        Ok(TokenSequence { ids, text: text.to_string() })
    }

    /// Maps ids back to text, skipping reserved control ids other than UNK.
    pub fn decode(&self, ids: &[u32]) -> String {
        let toks = ids.iter().filter(|&&i| !matches!(i, PAD | BOS | EOS)).map(|&i| self.token(i));
        match self.kind {
            TokenizerKind::Word => toks.collect::<Vec<_>>().join(" "),
            TokenizerKind::Char => toks.map(|t| if t == "▁" { " " } else { t }).collect(),
        }
    }

    /// Stable fingerprint of the tokenizer kind and token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}\n", self.kind));
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Whitespace words, or characters with spaces rendered as `▁`.
pub fn split(text: &str, kind: TokenizerKind) -> Vec<String> {
    match kind {
        TokenizerKind::Word => text.split_whitespace().map(str::to_string).collect(),
        TokenizerKind::Char => text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .chars()
            .map(|c| if c == ' ' { "▁".to_string() } else { c.to_string() })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed_and_never_produced() {
        let v = Vocabulary::build(["a b <s> b", "c </s>"], TokenizerKind::Word, 1).unwrap();
        assert_eq!(v.token(BOS), "<s>");
        assert_eq!(v.id("b"), 4);
        let seq = v.encode("b <s> zzz </s>", None).unwrap();
        assert_eq!(seq.ids, vec![4, UNK, UNK, UNK]);
    }

    #[test]
    fn file_round_trip_offsets_ids() {
        let v = Vocabulary::build(["x y y z z z"], TokenizerKind::Word, 1).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "z\ny\nx\n");
        let back = Vocabulary::read(buf.as_slice(), TokenizerKind::Word).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("x"), 6);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn min_count_drops_rare_tokens() {
        let v = Vocabulary::build(["a a b"], TokenizerKind::Word, 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.encode("a b", None).unwrap().ids, vec![4, UNK]);
    }

    #[test]
    fn empty_text_is_an_error_and_long_text_is_truncated() {
        let v = Vocabulary::build(["a b c d"], TokenizerKind::Word, 1).unwrap();
        assert!(v.encode("   ", None).is_err());
        assert_eq!(v.encode("a b c d", Some(2)).unwrap().ids.len(), 2);
    }

    #[test]
    fn character_level_round_trip() {
        let v = Vocabulary::build(["ab ba"], TokenizerKind::Char, 1).unwrap();
        let s = v.encode("ab  ba", None).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(v.decode(&s.ids), "ab ba");
    }

    #[test]
    fn duplicate_file_entries_are_rejected() {
        assert!(Vocabulary::read("a\nb\na\n".as_bytes(), TokenizerKind::Word).is_err());
    }
}
