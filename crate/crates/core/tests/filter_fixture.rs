mod common;

use common::fixtures;
use soupmt::corpus::{filter_corpus, filter_corpus_parallel, filter_sentence, LanguageIdentifier, SentenceRecord};

#[test]
fn every_case_gets_expected_decision() {
    let stop = fixtures::stopwords();
    let lid = fixtures::langid();
    for (i, case) in fixtures::filter_cases().iter().enumerate() {
        let rec = SentenceRecord::new(&case.text, &case.lang, "fixture").unwrap();
        let got = filter_sentence(&rec, &stop, Some(&lid as &dyn LanguageIdentifier));
        assert_eq!(got, case.expected, "case {}: {:?}", i + 1, case.text);
    }
}

#[test]
fn serial_and_parallel_agree() {
    let stop = fixtures::stopwords();
    let lid = fixtures::langid();
    let records: Vec<SentenceRecord> = fixtures::filter_cases()
        .iter()
        .cycle()
        .take(400)
        .enumerate()
        .map(|(i, c)| SentenceRecord::new(&c.text, &c.lang, &i.to_string()).unwrap())
        .collect();
    let serial = filter_corpus(&records, &stop, Some(&lid));
    let parallel = filter_corpus_parallel(&records, &stop, Some(&lid));
    assert_eq!(serial.0, parallel.0);
    assert_eq!(serial.1, parallel.1);
    assert!(serial.1.is_consistent());
    assert_eq!(serial.1.total_kept, 40);
}
