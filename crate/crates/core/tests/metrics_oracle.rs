mod common;

use common::fixtures::{self, CORPUS_BLEU, CORPUS_CHRF, PAIR_CHRF_ABCD_ABCE, SENTENCE_CHRF};
use soupmt::metrics::{bleu, chrf, evaluate, sentence_chrf};

#[test]
fn corpus_scores_match_reference_implementation() {
    let (h, r) = fixtures::metric_pairs();
    assert!((chrf(&h, &r).unwrap() - CORPUS_CHRF).abs() < 1e-9);
    assert!((bleu(&h, &r).unwrap().score - CORPUS_BLEU).abs() < 1e-9);
    let rep = evaluate(&h, &r).unwrap();
    assert_eq!((rep.hyp_len, rep.ref_len, rep.n_segments), (56, 57, 10));
}

#[test]
fn sentence_chrf_matches_reference_implementation() {
    let (h, r) = fixtures::metric_pairs();
    for ((h, r), want) in h.iter().zip(&r).zip(SENTENCE_CHRF) {
        assert!((sentence_chrf(h, r) - want).abs() < 1e-9, "{h} / {r}");
    }
    assert!((sentence_chrf("abcd", "abce") - PAIR_CHRF_ABCD_ABCE).abs() < 1e-9);
}

#[test]
fn scores_stay_in_range() {
    let (h, r) = fixtures::metric_pairs();
    for (h, r) in h.iter().zip(&r) {
        let b = bleu(&[h], &[r]).unwrap().score;
        let c = sentence_chrf(h, r);
        assert!((0.0..=100.0).contains(&b) && (0.0..=100.0).contains(&c));
    }
}
