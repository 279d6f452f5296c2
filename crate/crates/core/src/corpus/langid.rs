use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// Pluggable language identifier. `None` means the text could not be
/// classified.
pub trait LanguageIdentifier: Sync {
    fn identify(&self, text: &str) -> Option<String>;
}

type Profile = HashMap<String, f64>;

fn trigrams(text: &str) -> Profile {
    let padded: Vec<char> = std::iter::once(' ')
        .chain(
            text.to_lowercase()
                .chars()
                .map(|c| if c.is_alphabetic() { c } else { ' ' }),
        )
        .chain(std::iter::once(' '))
        .collect();
    let mut counts = Profile::new();
    for w in padded.windows(3) {
        if w.iter().all(|c| *c == ' ') || w[1] == ' ' {
            continue;
        }
        *counts.entry(w.iter().collect()).or_default() += 1.0;
    }
    counts
}

fn norm(p: &Profile) -> f64 {
    p.values().map(|v| v * v).sum::<f64>().sqrt()
}

/// Character-trigram cosine classifier built from per-language seed text.
#[derive(Debug, Clone, Default)]
pub struct TrigramClassifier {
    profiles: BTreeMap<String, (Profile, f64)>,
}

impl TrigramClassifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_language(&mut self, code: &str, seed_text: &str) {
        let entry = self.profiles.entry(code.to_string()).or_default();
        for (g, c) in trigrams(seed_text) {
            *entry.0.entry(g).or_default() += c;
        }
        entry.1 = norm(&entry.0);
    }

    /// One profile per `{code}.txt` seed file in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut c = Self::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for f in files {
            let code = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
            c.add_language(&code, &text);
        }
        if c.profiles.is_empty() {
            return Err(Error::Data(format!("no seed files in {}", dir.display())));
        }
        Ok(c)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    /// Cosine similarity of `text` to every known language.
    pub fn scores(&self, text: &str) -> Vec<(String, f64)> {
        let q = trigrams(text);
        let qn = norm(&q);
        self.profiles
            .iter()
            .map(|(code, (p, pn))| {
                let dot: f64 = q.iter().filter_map(|(g, c)| p.get(g).map(|v| v * c)).sum();
                let s = if qn > 0.0 && *pn > 0.0 { dot / (qn * pn) } else { 0.0 };
                (code.clone(), s)
            })
            .collect()
    }
}

impl LanguageIdentifier for TrigramClassifier {
    fn identify(&self, text: &str) -> Option<String> {
        // first maximum in code order
        let mut best: Option<(String, f64)> = None;
        for (code, s) in self.scores(text) {
            if s > 0.0 && best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((code, s));
            }
        }
        best.map(|(c, _)| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clf() -> TrigramClassifier {
        let mut c = TrigramClassifier::new();
        c.add_language(
            "en",
            "the quick brown fox jumps over the lazy dog and then the cat sleeps in the house",
        );
        c.add_language(
            "ht",
            "mwen renmen ou anpil epi li ale lekol chak jou nan vil la ak zanmi li yo",
        );
        c
    }

    #[test]
    fn picks_closest_profile() {
        assert_eq!(clf().identify("the dog and the house").as_deref(), Some("en"));
        assert_eq!(clf().identify("li renmen lekol la").as_deref(), Some("ht"));
    }

    #[test]
    fn unclassifiable_text() {
        assert_eq!(clf().identify("1234 5678"), None);
        assert_eq!(TrigramClassifier::new().identify("anything"), None);
    }
}
