//! Byte-pair-encoding subword tokenizer.
//!
//! Words are whitespace-separated and NFC-normalized. Each word is prefixed
//! with the boundary symbol [`WORD_START`], which is its own base symbol and
//! never merges with the first character, so subword lengths are unaffected
//! by the marker.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const WORD_START: &str = "\u{2581}";
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const MASK: usize = 3;
pub const UNK: usize = 4;
const SPECIALS: [&str; 5] = ["<pad>", "<s>", "</s>", "<mask>", "<unk>"];
const MERGES_HEADER: &str = "#merges";

pub fn lang_token(code: &str) -> String {
    format!("<lang:{code}>")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    n_special: usize,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.nfc().collect())
}

fn symbols(word: &str) -> Vec<String> {
    std::iter::once(WORD_START.to_string())
        .chain(word.chars().map(String::from))
        .collect()
}

/// Greedy BPE training. The highest-count adjacent pair is merged until the
/// vocabulary reaches `target_vocab_size` or no pair remains; count ties go
/// to the lexicographically smallest pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_vocab_size: usize, langs: &[&str]) -> Result<Vocabulary> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        for w in words(line.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Data("cannot train BPE on an empty corpus".into()));
    }
    let mut vocab = Vocabulary::with_specials(langs)?;
    let mut base: Vec<String> = counts
        .keys()
        .flat_map(|w| w.chars().map(String::from))
        .chain(std::iter::once(WORD_START.to_string()))
        .collect();
    base.sort();
    base.dedup();
    for s in base {
        vocab.push_token(s)?;
    }
    if target_vocab_size < vocab.len() {
        return Err(Error::Config(format!(
            "target vocabulary {target_vocab_size} is below the {} specials and base symbols",
            vocab.len()
        )));
    }

    let mut segmented: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (symbols(&w), c)).collect();
    while vocab.len() < target_vocab_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &segmented {
            // the marker stays a standalone symbol
            for win in syms[1..].windows(2) {
                *pairs.entry((&win[0], &win[1])).or_default() += c;
            }
        }
        let Some((best, _)) = pairs
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let (left, right) = (best.0.to_string(), best.1.to_string());
        for (syms, _) in &mut segmented {
            merge_in_place(syms, &left, &right);
        }
        vocab.push_merge(left, right)?;
    }
    Ok(vocab)
}

fn merge_in_place(syms: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            let r = syms.remove(i + 1);
            syms[i].push_str(&r);
        }
        i += 1;
    }
}

impl Vocabulary {
    fn with_specials(langs: &[&str]) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            merges: Vec::new(),
            ranks: HashMap::new(),
            n_special: 0,
        };
        for s in SPECIALS {
            v.push_token(s.to_string())?;
        }
        for code in langs {
            v.push_token(lang_token(code))?;
        }
        v.n_special = v.tokens.len();
        Ok(v)
    }

    fn push_token(&mut self, token: String) -> Result<()> {
        if token.is_empty() || token.chars().any(char::is_whitespace) || token == MERGES_HEADER {
            return Err(Error::Data(format!("token {token:?} cannot be stored")));
        }
        if self.index.contains_key(&token) {
            return Err(Error::Data(format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        Ok(())
    }

    fn push_merge(&mut self, left: String, right: String) -> Result<()> {
        let joined = format!("{left}{right}");
        if !self.index.contains_key(&joined) {
            self.push_token(joined)?;
        }
        self.ranks.insert((left.clone(), right.clone()), self.merges.len());
        self.merges.push((left, right));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < self.n_special
    }

    pub fn lang_id(&self, code: &str) -> Result<usize> {
        self.id(&lang_token(code))
            .ok_or_else(|| Error::Data(format!("vocabulary has no tag for language `{code}`")))
    }

    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r);
            let Some((_, w)) = best else { break };
            let (l, r) = (w[0].clone(), w[1].clone());
            merge_in_place(&mut syms, &l, &r);
        }
        syms
    }

    /// Subword strings, word markers included, unknown characters kept as-is.
    pub fn segment(&self, text: &str) -> Vec<String> {
        words(text).flat_map(|w| self.segment_word(&w)).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.segment(text).iter().map(|s| self.id(s).unwrap_or(UNK)).collect()
    }

    /// Inverse of [`encode`](Self::encode) up to whitespace normalization.
    /// Special tokens are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if self.is_special(id) {
                continue;
            }
            if let Some(t) = self.token(id) {
                out.push_str(t);
            }
        }
        out.replace(WORD_START, " ").trim_start().to_string()
    }

    /// Character lengths of each word's subwords, boundary markers excluded.
    pub fn word_subword_lengths<S: AsRef<str>>(&self, corpus: &[S]) -> Vec<Vec<usize>> {
        corpus
            .iter()
            .flat_map(|line| words(line.as_ref()).collect::<Vec<_>>())
            .map(|w| {
                self.segment_word(&w)
                    .iter()
                    .filter(|s| s.as_str() != WORD_START)
                    .map(|s| s.chars().count())
                    .collect()
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out.push_str(MERGES_HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut tokens = Vec::new();
        let mut saw_header = false;
        for (_, line) in lines.by_ref() {
            if line == MERGES_HEADER {
                saw_header = true;
                break;
            }
            tokens.push(line.to_string());
        }
        if !saw_header {
            return Err(Error::Parse {
                line: tokens.len() + 1,
                msg: format!("missing `{MERGES_HEADER}` section"),
            });
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Parse {
                line: 1,
                msg: "vocabulary must start with the special tokens".into(),
            });
        }
        let langs: Vec<&str> = tokens[SPECIALS.len()..]
            .iter()
            .map_while(|t| t.strip_prefix("<lang:").and_then(|t| t.strip_suffix('>')))
            .collect();
        let mut v = Self::with_specials(&langs)?;
        for (i, t) in tokens.iter().enumerate().skip(v.len()) {
            v.push_token(t.clone()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        for (i, line) in lines {
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `left right`, got {line:?}"),
                });
            };
            let joined = format!("{l}{r}");
            if v.id(l).is_none() || v.id(r).is_none() || v.id(&joined).is_none() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("merge `{l} {r}` refers to unknown tokens"),
                });
            }
            v.ranks.insert((l.to_string(), r.to_string()), v.merges.len());
            v.merges.push((l.to_string(), r.to_string()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_size(corpus: &[&str]) -> usize {
        let chars: std::collections::BTreeSet<char> = corpus
            .iter()
            .flat_map(|l| l.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        SPECIALS.len() + chars.len() + 1
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let corpus = ["aaab aaab"];
        let n = base_size(&corpus);
        let v = train_bpe(&corpus, n + 1, &[]).unwrap();
        assert_eq!(v.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn target_equal_to_charset_means_no_merges() {
        let corpus = ["hello world"];
        let n = base_size(&corpus);
        assert!(train_bpe(&corpus, n, &[]).unwrap().merges().is_empty());
    }

    #[test]
    fn encode_applies_merges() {
        let corpus = ["aaab aaab"];
        let v = train_bpe(&corpus, base_size(&corpus) + 1, &[]).unwrap();
        let toks: Vec<&str> = v.encode("aaab").iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, [WORD_START, "aa", "a", "b"]);
        assert_eq!(v.word_subword_lengths(&["aaab"]), vec![vec![2, 1, 1]]);
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = train_bpe(&["abc"], 12, &[]).unwrap();
        assert!(v.encode("abz").contains(&UNK));
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn empty_corpus_is_data_error() {
        let empty: [&str; 0] = [];
        assert!(matches!(train_bpe(&empty, 100, &[]), Err(Error::Data(_))));
        assert!(matches!(train_bpe(&["  "], 100, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn text_roundtrip() {
        let corpus = ["the cat sat on the mat", "the dog sat too"];
        let v = train_bpe(&corpus, 40, &["en", "ht"]).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.lang_id("ht").unwrap(), 6);
    }

    #[test]
    fn malformed_merge_line_reports_line_number() {
        let corpus = ["abab"];
        let v = train_bpe(&corpus, 12, &[]).unwrap();
        let text = v.to_text() + "x\n";
        match Vocabulary::from_text(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, text.lines().count()),
            other => panic!("{other:?}"),
        }
    }
}
