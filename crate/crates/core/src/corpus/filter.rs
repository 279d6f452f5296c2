use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{LanguageIdentifier, SentenceRecord};
use crate::error::{Error, Result};

pub const N_RULES: usize = 10;
const BULLETS: [char; 5] = ['•', '‣', '▪', '*', '-'];
const FINAL_CHARS: [char; 4] = ['.', '!', '"', '?'];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    /// First breached rule, 1-based.
    Reject(u8),
}

/// Lowercased stopwords.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordSet(HashSet<String>);

impl StopwordSet {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        Self(
            words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    /// One stopword per line; blank lines and `#` comments are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(text.lines().filter(|l| !l.trim_start().starts_with('#'))))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        let t = token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        !t.is_empty() && self.0.contains(&t)
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Evaluates the ten cleaning rules in order and returns the first breach.
/// Character ratios are taken over all characters of the sentence. Rule 5
/// is skipped for an empty stopword set and rule 10 when `lang_id` is `None`.
pub fn filter_sentence(
    s: &SentenceRecord,
    stopwords: &StopwordSet,
    lang_id: Option<&dyn LanguageIdentifier>,
) -> Decision {
    let text = s.text.trim();
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let count = |f: fn(&char) -> bool| chars.iter().filter(|c| f(c)).count();

    if !text.ends_with(FINAL_CHARS) {
        return Decision::Reject(1);
    }
    if ratio(count(char::is_ascii_digit), n) >= 0.25 {
        return Decision::Reject(2);
    }
    if text.starts_with(BULLETS) {
        return Decision::Reject(3);
    }
    if text.to_lowercase().contains("lorem ipsum") {
        return Decision::Reject(4);
    }
    if !stopwords.is_empty() {
        let stop = tokens.iter().filter(|t| stopwords.contains(t)).count();
        if ratio(stop, tokens.len()) >= 0.6 {
            return Decision::Reject(5);
        }
    }
    let non_alpha = tokens.iter().filter(|t| !t.chars().any(char::is_alphabetic)).count();
    if ratio(non_alpha, tokens.len()) >= 0.25 {
        return Decision::Reject(6);
    }
    if !(14..=300).contains(&n) {
        return Decision::Reject(7);
    }
    if ratio(count(|c| c.is_uppercase()), n) >= 0.2 {
        return Decision::Reject(8);
    }
    if ratio(count(|c| c.is_alphabetic()), n) <= 0.6 {
        return Decision::Reject(9);
    }
    if let Some(id) = lang_id {
        if id.identify(text).as_deref() != Some(s.lang.as_str()) {
            return Decision::Reject(10);
        }
    }
    Decision::Keep
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub total_in: usize,
    pub total_kept: usize,
    /// First-breach counts for rules 1..=10.
    pub breaches: [usize; N_RULES],
}

impl FilterReport {
    fn record(&mut self, d: Decision) {
        self.total_in += 1;
        match d {
            Decision::Keep => self.total_kept += 1,
            Decision::Reject(r) => self.breaches[r as usize - 1] += 1,
        }
    }

    pub fn merge(mut self, other: &FilterReport) -> Self {
        self.total_in += other.total_in;
        self.total_kept += other.total_kept;
        for (a, b) in self.breaches.iter_mut().zip(other.breaches) {
            *a += b;
        }
        self
    }

    pub fn is_consistent(&self) -> bool {
        self.total_kept + self.breaches.iter().sum::<usize>() == self.total_in
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("total_in: {}\ntotal_kept: {}\n", self.total_in, self.total_kept);
        for (i, c) in self.breaches.iter().enumerate() {
            let _ = writeln!(out, "rule_{}: {c}", i + 1);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,count\n");
        let _ = writeln!(out, "total_in,{}", self.total_in);
        let _ = writeln!(out, "total_kept,{}", self.total_kept);
        for (i, c) in self.breaches.iter().enumerate() {
            let _ = writeln!(out, "rule_{},{c}", i + 1);
        }
        out
    }
}

fn collect(records: &[SentenceRecord], decisions: Vec<Decision>) -> (Vec<SentenceRecord>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for (r, d) in records.iter().zip(decisions) {
        report.record(d);
        if d == Decision::Keep {
            kept.push(r.clone());
        }
    }
    (kept, report)
}

/// Order-preserving filter over a corpus.
pub fn filter_corpus(
    records: &[SentenceRecord],
    stopwords: &StopwordSet,
    lang_id: Option<&dyn LanguageIdentifier>,
) -> (Vec<SentenceRecord>, FilterReport) {
    let decisions = records.iter().map(|r| filter_sentence(r, stopwords, lang_id)).collect();
    collect(records, decisions)
}

/// Same result as [`filter_corpus`], evaluated on the rayon pool.
pub fn filter_corpus_parallel(
    records: &[SentenceRecord],
    stopwords: &StopwordSet,
    lang_id: Option<&dyn LanguageIdentifier>,
) -> (Vec<SentenceRecord>, FilterReport) {
    let decisions = records
        .par_iter()
        .map(|r| filter_sentence(r, stopwords, lang_id))
        .collect();
    collect(records, decisions)
}
