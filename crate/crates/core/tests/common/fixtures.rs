//! Loaders for the files under `data/fixtures`.

use std::path::PathBuf;

use soupmt::corpus::{Decision, StopwordSet, TrigramClassifier};

pub fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fixtures")
}

/// Oracle values for `metric_pairs.tsv`, frozen from sacrebleu 2.6
/// (`tokenize="none"`, no smoothing).
pub const CORPUS_CHRF: f64 = 60.37265008365069;
pub const CORPUS_BLEU: f64 = 33.83707881160774;
pub const SENTENCE_CHRF: [f64; 10] = [
    49.6485170311433,
    76.52964337937404,
    75.09187440086696,
    59.8373638311668,
    67.10286037491919,
    59.413945956928636,
    65.19418441129959,
    61.22975363214651,
    66.0935442271992,
    32.377096147615475,
];
pub const PAIR_CHRF_ABCD_ABCE: f64 = 47.91666666666667;

pub fn metric_pairs() -> (Vec<String>, Vec<String>) {
    let text = std::fs::read_to_string(dir().join("metric_pairs.tsv")).unwrap();
    text.lines()
        .map(|l| {
            let (h, r) = l.split_once('\t').unwrap();
            (h.to_string(), r.to_string())
        })
        .unzip()
}

pub struct FilterCase {
    pub lang: String,
    pub expected: Decision,
    pub text: String,
}

pub fn filter_cases() -> Vec<FilterCase> {
    let text = std::fs::read_to_string(dir().join("filter_cases.tsv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let mut f = l.splitn(3, '\t');
            let lang = f.next().unwrap().to_string();
            let expected = match f.next().unwrap() {
                "keep" => Decision::Keep,
                n => Decision::Reject(n.parse().unwrap()),
            };
            FilterCase {
                lang,
                expected,
                text: f.next().unwrap().to_string(),
            }
        })
        .collect()
}

pub fn stopwords() -> StopwordSet {
    StopwordSet::load(&dir().join("stopwords_en.txt")).unwrap()
}

pub fn langid() -> TrigramClassifier {
    TrigramClassifier::from_dir(&dir().join("langid")).unwrap()
}
