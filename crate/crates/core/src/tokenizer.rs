//! WordPiece vocabulary learning and greedy longest-match encoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";
pub const DEFAULT_MAX_LEN: usize = 64;

/// Words longer than this (in chars) encode as `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const CLS_ID: u32 = 2;
    pub const SEP_ID: u32 = 3;

    /// Token list in id order. The first four entries must be the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let specials = [PAD, UNK, CLS, SEP];
        if tokens.len() < specials.len() || tokens.iter().zip(specials).any(|(t, s)| t != s) {
            return Err(Error::Config(format!(
                "vocabulary must start with {}",
                specials.join(", ")
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary entry {tok:?} at line {}", i + 1)));
            }
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// One token per line; line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Vocab::from_tokens(
            text.lines()
                .map(|l| l.trim_end_matches('\r').to_string())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::parse(&text)
    }
}

type Piece = String;

/// Learns a WordPiece vocabulary of at most `target_size` entries.
///
/// Starts from every character seen (word-initial as-is, word-internal with
/// the `##` prefix), then repeatedly merges the most frequent adjacent pair.
/// `reserved` tokens (entity and emoji alias tokens) are added whole and
/// their occurrences are never split.
pub fn build_vocab(corpus: &[String], target_size: usize, reserved: &[String]) -> Result<Vocab> {
    if target_size < 5 {
        return Err(Error::Config(format!(
            "target vocabulary size {target_size} leaves no room beyond the 4 special tokens"
        )));
    }
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::ingestion("<corpus>", "corpus has no words"));
    }

    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].map(String::from).to_vec();
    let mut present: HashSet<String> = tokens.iter().cloned().collect();
    let mut push = |tok: String, tokens: &mut Vec<String>| {
        if present.insert(tok.clone()) {
            tokens.push(tok);
        }
    };
    for r in reserved {
        push(r.clone(), &mut tokens);
    }
    if tokens.len() > target_size {
        return Err(Error::Config(format!(
            "{} reserved tokens do not fit a vocabulary of {target_size}",
            reserved.len()
        )));
    }
    let reserved_set: HashSet<&str> = reserved.iter().map(String::as_str).collect();

    // Words as piece sequences, with counts.
    let mut words: Vec<(Vec<Piece>, u64)> = word_counts
        .iter()
        .filter(|(w, _)| !reserved_set.contains(**w) && w.chars().count() <= MAX_WORD_CHARS)
        .map(|(w, &c)| {
            let pieces = w
                .chars()
                .enumerate()
                .map(|(i, ch)| if i == 0 { ch.to_string() } else { format!("{CONTINUATION}{ch}") })
                .collect();
            (pieces, c)
        })
        .collect();

    // Alphabet, most frequent first; truncated if it alone overflows.
    let mut alphabet: BTreeMap<Piece, u64> = BTreeMap::new();
    for (pieces, c) in &words {
        for p in pieces {
            *alphabet.entry(p.clone()).or_default() += c;
        }
    }
    let mut alphabet: Vec<(Piece, u64)> = alphabet.into_iter().collect();
    alphabet.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (p, _) in alphabet {
        if tokens.len() >= target_size {
            break;
        }
        push(p, &mut tokens);
    }

    while tokens.len() < target_size {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (pieces, c) in &words {
            for w in pieces.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        let Some(((a, b), _)) = pairs
            .into_iter()
            .max_by(|x, y| x.1.cmp(&y.1).then_with(|| y.0.cmp(&x.0)))
        else {
            break;
        };
        let (a, b) = (a.to_string(), b.to_string());
        let merged = format!("{a}{}", b.trim_start_matches(CONTINUATION));
        for (pieces, _) in words.iter_mut() {
            if pieces.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && pieces[i] == a && pieces[i + 1] == b {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut pieces[i]));
                    i += 1;
                }
            }
            *pieces = out;
        }
        push(merged, &mut tokens);
    }
    Vocab::from_tokens(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedText {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

impl EncodedText {
    /// Number of mask-1 positions.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Greedy longest-match-first pieces for one word; `None` if any span has no match.
fn word_pieces(word: &str, vocab: &Vocab) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return None;
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut cand: String = chars[start..end].iter().collect();
            if start > 0 {
                cand.insert_str(0, CONTINUATION);
            }
            if let Some(id) = vocab.id(&cand) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        out.push(found?);
        start = end;
    }
    Some(out)
}

/// Token ids for `text` without specials or padding.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<u32> {
    text.split_whitespace()
        .flat_map(|w| word_pieces(w, vocab).unwrap_or_else(|| vec![Vocab::UNK_ID]))
        .collect()
}

/// `[CLS] pieces… [SEP]` padded with `[PAD]` to exactly `max_len`.
/// Overlong inputs drop trailing pieces before `[SEP]`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<EncodedText> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len {max_len} cannot hold [CLS] and [SEP]")));
    }
    let mut pieces = tokenize(text, vocab);
    pieces.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(Vocab::CLS_ID);
    ids.extend(pieces);
    ids.push(Vocab::SEP_ID);
    let used = ids.len();
    ids.resize(max_len, Vocab::PAD_ID);
    let mut mask = vec![1u8; used];
    mask.resize(max_len, 0);
    Ok(EncodedText { ids, mask })
}

/// Joins pieces back into words, dropping specials.
pub fn decode(ids: &[u32], vocab: &Vocab) -> String {
    let mut out = String::new();
    for &id in ids {
        if id <= Vocab::SEP_ID && id != Vocab::UNK_ID {
            continue;
        }
        let Some(tok) = vocab.token(id) else { continue };
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(extra: &[&str]) -> Vocab {
        let mut t: Vec<String> = [PAD, UNK, CLS, SEP].map(String::from).to_vec();
        t.extend(extra.iter().map(|s| s.to_string()));
        Vocab::from_tokens(t).unwrap()
    }

    #[test]
    fn toy_corpus_vocab() {
        let v = build_vocab(&["ab ab".to_string()], 8, &[]).unwrap();
        for t in [PAD, UNK, CLS, SEP, "a", "##b"] {
            assert!(v.contains(t), "missing {t}");
        }
        assert!(v.len() <= 8);
        assert_eq!(v.id(PAD), Some(0));
    }

    #[test]
    fn too_small_target_rejected() {
        assert!(build_vocab(&["ab".to_string()], 4, &[]).is_err());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(build_vocab(&[], 10, &[]), Err(Error::Ingestion { .. })));
        assert!(matches!(build_vocab(&["  ".into()], 10, &[]), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn reserved_tokens_are_atomic() {
        let corpus = vec!["<user> hi <user>".to_string()];
        let v = build_vocab(&corpus, 20, &["<user>".to_string()]).unwrap();
        let enc = encode("<user> hi", &v, 6).unwrap();
        assert_eq!(enc.ids[1], v.id("<user>").unwrap());
        assert!(!v.contains("##u"));
    }

    #[test]
    fn encode_empty() {
        let v = vocab(&["a", "##b"]);
        let e = encode("", &v, 5).unwrap();
        assert_eq!(e.ids, vec![2, 3, 0, 0, 0]);
        assert_eq!(e.mask, vec![1, 1, 0, 0, 0]);
    }

    #[test]
    fn encode_greedy_pieces() {
        let v = vocab(&["a", "##b"]);
        let e = encode("ab", &v, 5).unwrap();
        assert_eq!(e.ids, vec![2, 4, 5, 3, 0]);
    }

    #[test]
    fn unknown_word_becomes_unk() {
        let v = vocab(&["a", "##b"]);
        let e = encode("☃", &v, 4).unwrap();
        assert_eq!(e.ids, vec![2, 1, 3, 0]);
        // partial match still makes the whole word unknown
        let e = encode("ax", &v, 4).unwrap();
        assert_eq!(e.ids, vec![2, 1, 3, 0]);
    }

    #[test]
    fn truncation_keeps_sep() {
        let v = vocab(&["a"]);
        let e = encode("a a a a a", &v, 4).unwrap();
        assert_eq!(e.ids, vec![2, 4, 4, 3]);
        assert!(encode("a", &v, 1).is_err());
    }

    #[test]
    fn vocab_file_roundtrip_and_validation() {
        let v = vocab(&["a", "##b", "<user>"]);
        assert_eq!(Vocab::parse(&v.to_file_string()).unwrap(), v);
        assert!(Vocab::parse("a\nb\n").is_err());
        assert!(Vocab::from_tokens(
            [PAD, UNK, CLS, SEP, "x", "x"].map(String::from).to_vec()
        )
        .is_err());
    }
}
