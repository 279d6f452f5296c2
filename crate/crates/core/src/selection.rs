//! Ranking candidate transfer languages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LanguageProfile {
    pub code: String,
    /// `None` marks a missing feature.
    pub typo_features: Vec<Option<f64>>,
    pub embedding: Option<Vec<f64>>,
    pub corpus_ref: Option<PathBuf>,
    pub group_tags: BTreeSet<String>,
}

impl LanguageProfile {
    pub fn new(code: &str) -> Self {
        Self {
            code: code.to_string(),
            ..Self::default()
        }
    }
}

fn cosine(a: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine distance `1 - cos` over features known in both profiles.
pub fn typological_distance(a: &LanguageProfile, b: &LanguageProfile) -> Result<f64> {
    let shared: Vec<(f64, f64)> = a
        .typo_features
        .iter()
        .zip(&b.typo_features)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    if shared.is_empty() {
        return Err(Error::Coverage(format!(
            "{} and {} share no known features",
            a.code, b.code
        )));
    }
    // An all-zero side has no direction; treat it as maximally unlike
    // anything except another all-zero vector.
    match cosine(shared.iter().copied()) {
        Some(c) => Ok(1.0 - c),
        None if shared.iter().all(|(x, y)| *x == 0.0 && *y == 0.0) => Ok(0.0),
        None => Ok(1.0),
    }
}

pub fn embedding_similarity(a: &LanguageProfile, b: &LanguageProfile) -> Result<f64> {
    let ea = a
        .embedding
        .as_ref()
        .ok_or_else(|| Error::Data(format!("no embedding for {}", a.code)))?;
    let eb = b
        .embedding
        .as_ref()
        .ok_or_else(|| Error::Data(format!("no embedding for {}", b.code)))?;
    if ea.len() != eb.len() {
        return Err(Error::Data(format!(
            "embedding sizes differ: {} has {}, {} has {}",
            a.code,
            ea.len(),
            b.code,
            eb.len()
        )));
    }
    cosine(ea.iter().copied().zip(eb.iter().copied()))
        .ok_or_else(|| Error::Data(format!("zero embedding for {} or {}", a.code, b.code)))
}

/// A subword evenness score in degrees; lower is a better transfer candidate.
pub trait EvennessScorer: Sync {
    fn score(&self, corpus: &[String], vocab: &Vocabulary) -> Result<f64>;
}

/// `atan(mean u)` over words split into two or more subwords, with
/// `u = (longest - shortest subword) / word length` in characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpreadEvenness;

impl SpreadEvenness {
    pub fn from_lengths<'a>(words: impl IntoIterator<Item = &'a [usize]>) -> Result<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for lens in words {
            if lens.len() < 2 {
                continue;
            }
            let total: usize = lens.iter().sum();
            let max = *lens.iter().max().expect("non-empty");
            let min = *lens.iter().min().expect("non-empty");
            sum += (max - min) as f64 / total as f64;
            n += 1;
        }
        if n == 0 {
            return Err(Error::UndefinedScore(
                "no word splits into more than one subword".into(),
            ));
        }
        Ok((sum / n as f64).atan().to_degrees())
    }
}

impl EvennessScorer for SpreadEvenness {
    fn score(&self, corpus: &[String], vocab: &Vocabulary) -> Result<f64> {
        let lens = vocab.word_subword_lengths(corpus);
        Self::from_lengths(lens.iter().map(|v| v.as_slice()))
    }
}

/// `group: code1,code2,...` per line; blank lines and `#` comments skipped.
pub fn parse_language_groups(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut groups = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let (name, codes) = line.split_once(':').ok_or_else(|| err("expected `group: codes`"))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(err("empty group name"));
        }
        let codes: Vec<String> = codes.split(',').map(|c| c.trim().to_string()).collect();
        if codes.iter().any(|c| c.is_empty() || c.contains(char::is_whitespace)) {
            return Err(err("empty or malformed language code"));
        }
        if groups.insert(name.to_string(), codes).is_some() {
            return Err(err("duplicate group"));
        }
    }
    Ok(groups)
}

pub fn load_language_groups(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_language_groups(&text)
}

/// Rows of `code,v0,v1,...`, `NA` for a missing value. A header row whose
/// first cell is `code` is skipped.
pub fn parse_feature_csv(text: &str) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.is_empty() || (i == 0 && &rec[0] == "code") {
            continue;
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|c| match c {
                "NA" | "" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad value {v:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some((_, first)) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} values, got {}", first.len(), values.len()),
                });
            }
        }
        rows.push((rec[0].to_string(), values));
    }
    Ok(rows)
}

pub fn load_feature_csv(path: &Path) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text)
}

#[derive(Clone, Copy)]
pub enum Criterion<'a> {
    Typological,
    Embedding,
    Evenness {
        scorer: &'a dyn EvennessScorer,
        vocab: &'a Vocabulary,
    },
    /// Members of a named group, unscored.
    Group(&'a str),
}

impl Criterion<'_> {
    pub fn tag(&self) -> &'static str {
        match self {
            Criterion::Typological => "typological",
            Criterion::Embedding => "embedding",
            Criterion::Evenness { .. } => "sue",
            Criterion::Group(_) => "group",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub criterion: String,
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
    /// Set when fewer than `k` candidates were available.
    pub short: bool,
}

impl SelectionResult {
    pub fn codes(&self) -> Vec<&str> {
        self.ranked.iter().map(|(c, _)| c.as_str()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,code,score\n");
        for (i, (code, score)) in self.ranked.iter().enumerate() {
            s.push_str(&format!("{},{code},{score}\n", i + 1));
        }
        s
    }
}

fn read_corpus(p: &LanguageProfile) -> Result<Vec<String>> {
    let path = p
        .corpus_ref
        .as_ref()
        .ok_or_else(|| Error::Data(format!("no corpus for {}", p.code)))?;
    crate::corpus::read_lines(path)
}

/// Top-`k` candidates. Distances and evenness angles rank ascending,
/// similarities descending, group members by code; ties go to the smaller
/// code.
pub fn select_transfer_languages(
    target: &LanguageProfile,
    candidates: &[LanguageProfile],
    criterion: Criterion<'_>,
    k: usize,
) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let pool: Vec<&LanguageProfile> = candidates.iter().filter(|c| c.code != target.code).collect();
    let mut scored: Vec<(String, f64)> = match criterion {
        Criterion::Typological => pool
            .par_iter()
            .map(|c| Ok((c.code.clone(), typological_distance(target, c)?)))
            .collect::<Result<_>>()?,
        Criterion::Embedding => pool
            .par_iter()
            .map(|c| Ok((c.code.clone(), -embedding_similarity(target, c)?)))
            .collect::<Result<_>>()?,
        Criterion::Evenness { scorer, vocab } => pool
            .par_iter()
            .map(|c| Ok((c.code.clone(), scorer.score(&read_corpus(c)?, vocab)?)))
            .collect::<Result<_>>()?,
        Criterion::Group(g) => pool
            .iter()
            .filter(|c| c.group_tags.contains(g))
            .map(|c| (c.code.clone(), 0.0))
            .collect(),
    };
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let short = scored.len() < k;
    scored.truncate(k);
    if matches!(criterion, Criterion::Embedding) {
        for s in &mut scored {
            s.1 = -s.1;
        }
    }
    Ok(SelectionResult {
        criterion: criterion.tag().to_string(),
        ranked: scored,
        k,
        short,
    })
}
