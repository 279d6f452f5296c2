//! Document splitting, rule-based sentence filtering, language ID, and
//! denoising noise.

mod filter;
mod langid;
mod noise;
mod split;

use std::path::Path;

pub use filter::{
    filter_corpus, filter_corpus_parallel, filter_sentence, Decision, FilterReport, StopwordSet, N_RULES,
};
pub use langid::{LanguageIdentifier, TrigramClassifier};
pub use noise::{apply_noise, apply_noise_with, collapse_masked, mask_positions, NoiseConfig};
pub use split::split_sentences;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub text: String,
    pub lang: String,
    pub doc_id: String,
}

impl SentenceRecord {
    pub fn new(text: &str, lang: &str, doc_id: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text.contains(['\n', '\r']) {
            return Err(Error::Data(format!("invalid sentence text {text:?}")));
        }
        Ok(Self {
            text: text.to_string(),
            lang: lang.to_string(),
            doc_id: doc_id.to_string(),
        })
    }
}

/// Splits one-document-per-line input into sentence records with
/// `doc_id = "{source}:{line}"`.
pub fn records_from_documents(text: &str, lang: &str, source: &str) -> Vec<SentenceRecord> {
    text.lines()
        .enumerate()
        .flat_map(|(i, doc)| {
            split_sentences(doc)
                .into_iter()
                .filter_map(move |s| SentenceRecord::new(&s, lang, &format!("{source}:{}", i + 1)).ok())
        })
        .collect()
}

/// Non-empty trimmed lines of a UTF-8 file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Tab-separated `source<TAB>target` lines.
pub fn read_parallel(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((s, t)) = line.split_once('\t') else {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected `source<TAB>target`".into(),
            });
        };
        out.push((s.trim().to_string(), t.trim().to_string()));
    }
    Ok(out)
}
