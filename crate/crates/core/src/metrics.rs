//! Corpus BLEU and chrF.
//!
//! BLEU works on whitespace tokens of pre-tokenized text; use
//! [`pretokenize`] on raw text first. chrF follows the usual character
//! n-gram definition (orders 1-6, beta 2, whitespace dropped) with
//! statistics summed over the corpus before the F-score is taken.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;

use crate::error::{Error, Result};

const BLEU_ORDER: usize = 4;
const CHRF_ORDER: usize = 6;
const CHRF_BETA: f64 = 2.0;

fn check_lengths<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

fn counts<K: Hash + Eq + Clone>(items: &[K], n: usize) -> HashMap<&[K], usize> {
    let mut m = HashMap::new();
    if items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// `(clipped matches, hyp n-grams, ref n-grams)` for order `n`.
fn ngram_stats<K: Hash + Eq + Clone>(hyp: &[K], reference: &[K], n: usize) -> (usize, usize, usize) {
    let h = counts(hyp, n);
    let r = counts(reference, n);
    let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (
        matched,
        hyp.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// Splits punctuation off words so that `"ye?"` becomes `"ye ?"`.
pub fn pretokenize(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_ascii()) {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BleuStats {
    matched: [usize; BLEU_ORDER],
    total: [usize; BLEU_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn of(hyp: &str, reference: &str) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        let mut s = BleuStats {
            hyp_len: h.len(),
            ref_len: r.len(),
            ..Default::default()
        };
        for n in 1..=BLEU_ORDER {
            let (m, t, _) = ngram_stats(&h, &r, n);
            s.matched[n - 1] = m;
            s.total[n - 1] = t;
        }
        s
    }

    fn merge(mut self, o: Self) -> Self {
        for i in 0..BLEU_ORDER {
            self.matched[i] += o.matched[i];
            self.total[i] += o.total[i];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
        self
    }

    fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        }
    }

    fn score(&self, smooth: f64) -> BleuScore {
        let precisions: [f64; BLEU_ORDER] = std::array::from_fn(|i| {
            let (m, t) = (self.matched[i] as f64, self.total[i] as f64);
            if i > 0 && smooth > 0.0 {
                (m + smooth) / (t + smooth)
            } else if t == 0.0 {
                0.0
            } else {
                m / t
            }
        });
        let bp = self.brevity_penalty();
        let score = if precisions.contains(&0.0) {
            0.0
        } else {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / BLEU_ORDER as f64;
            100.0 * bp * log_mean.exp()
        };
        BleuScore {
            score,
            precisions: precisions.map(|p| 100.0 * p),
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuScore {
    /// In `[0, 100]`.
    pub score: f64,
    /// Modified n-gram precisions for n = 1..4, as percentages.
    pub precisions: [f64; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Unsmoothed corpus BLEU: a zero precision at any order gives 0.
pub fn bleu<H, R>(hyps: &[H], refs: &[R]) -> Result<BleuScore>
where
    H: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    check_lengths(hyps, refs)?;
    let stats = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| BleuStats::of(h.as_ref(), r.as_ref()))
        .reduce(BleuStats::default, BleuStats::merge);
    Ok(stats.score(0.0))
}

/// Sentence BLEU with add-one smoothing on orders 2-4. For diagnostics only;
/// corpus scores come from [`bleu`].
pub fn sentence_bleu_add_one(hyp: &str, reference: &str) -> BleuScore {
    BleuStats::of(hyp, reference).score(1.0)
}

type ChrfStats = [[usize; 3]; CHRF_ORDER];

fn chrf_stats(hyp: &str, reference: &str) -> ChrfStats {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    std::array::from_fn(|i| {
        let (m, th, tr) = ngram_stats(&h, &r, i + 1);
        [th, tr, m]
    })
}

/// Precision and recall are averaged over the orders present in both
/// hypothesis and reference, then combined into one F-beta score.
fn chrf_from_stats(stats: &ChrfStats) -> f64 {
    let (mut prec, mut rec, mut effective) = (0.0, 0.0, 0usize);
    for &[n_hyp, n_ref, n_match] in stats {
        if n_hyp > 0 && n_ref > 0 {
            prec += n_match as f64 / n_hyp as f64;
            rec += n_match as f64 / n_ref as f64;
            effective += 1;
        }
    }
    if effective == 0 {
        return 0.0;
    }
    prec /= effective as f64;
    rec /= effective as f64;
    let factor = CHRF_BETA * CHRF_BETA;
    if prec + rec == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + factor) * prec * rec / (factor * prec + rec)
}

/// Corpus chrF in `[0, 100]`.
pub fn chrf<H, R>(hyps: &[H], refs: &[R]) -> Result<f64>
where
    H: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    check_lengths(hyps, refs)?;
    let stats = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| chrf_stats(h.as_ref(), r.as_ref()))
        .reduce(
            || [[0; 3]; CHRF_ORDER],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for k in 0..3 {
                        x[k] += y[k];
                    }
                }
                a
            },
        );
    Ok(chrf_from_stats(&stats))
}

pub fn sentence_chrf(hyp: &str, reference: &str) -> f64 {
    chrf_from_stats(&chrf_stats(hyp, reference))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    pub chrf: f64,
    pub n_segments: usize,
    pub precisions: [f64; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

pub fn evaluate<H, R>(hyps: &[H], refs: &[R]) -> Result<EvalReport>
where
    H: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    let b = bleu(hyps, refs)?;
    Ok(EvalReport {
        bleu: b.score,
        chrf: chrf(hyps, refs)?,
        n_segments: hyps.len(),
        precisions: b.precisions,
        brevity_penalty: b.brevity_penalty,
        hyp_len: b.hyp_len,
        ref_len: b.ref_len,
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let p = self.precisions;
        format!(
            "BLEU = {:.2} {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3} hyp_len = {} ref_len = {})\nchrF = {:.2}\nsegments = {}\n",
            self.bleu, p[0], p[1], p[2], p[3], self.brevity_penalty, self.hyp_len, self.ref_len, self.chrf, self.n_segments
        )
    }

    pub fn to_csv(&self) -> String {
        let p = self.precisions;
        format!(
            "bleu,chrf,n_segments,p1,p2,p3,p4,brevity_penalty,hyp_len,ref_len\n{},{},{},{},{},{},{},{},{},{}\n",
            self.bleu,
            self.chrf,
            self.n_segments,
            p[0],
            p[1],
            p[2],
            p[3],
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_bleu() {
        let b = bleu(&["the cat sat on mat"], &["the cat sat on the mat"]).unwrap();
        assert!((b.score - 57.89).abs() < 0.01, "{}", b.score);
        assert!((b.brevity_penalty - (-0.2f64).exp()).abs() < 1e-12);
        assert_eq!(b.precisions[0], 100.0);
        assert_eq!(b.precisions[1], 75.0);
        assert_eq!(b.precisions[3], 50.0);
    }

    #[test]
    fn identity_and_disjoint() {
        let refs = ["a b c d e", "x y z w v u"];
        assert_eq!(bleu(&refs, &refs).unwrap().score, 100.0);
        assert_eq!(chrf(&refs, &refs).unwrap(), 100.0);
        assert_eq!(bleu(&["p q r s t"], &["a b c d e"]).unwrap().score, 0.0);
        assert_eq!(chrf(&["pqrs"], &["abcd"]).unwrap(), 0.0);
    }

    #[test]
    fn chrf_reference_pair() {
        assert!((sentence_chrf("abcd", "abce") - 47.91666666666667).abs() < 1e-9);
    }

    #[test]
    fn permutation_invariant() {
        let h = ["a b c d", "e f g h i", "j k l"];
        let r = ["a b c e", "e f g h", "j k l m"];
        let hp = [h[2], h[0], h[1]];
        let rp = [r[2], r[0], r[1]];
        assert_eq!(bleu(&h, &r).unwrap(), bleu(&hp, &rp).unwrap());
        assert_eq!(chrf(&h, &r).unwrap(), chrf(&hp, &rp).unwrap());
    }

    #[test]
    fn appending_exact_match_does_not_lower_bleu() {
        let mut h = vec!["the cat sat on the mat today", "a dog ran far"];
        let mut r = vec!["the cat sat on the mat", "a dog ran away"];
        let before = bleu(&h, &r).unwrap();
        assert_eq!(before.brevity_penalty, 1.0);
        h.push("one two three four five");
        r.push("one two three four five");
        assert!(bleu(&h, &r).unwrap().score >= before.score);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(matches!(bleu(&["a"], &["a", "b"]), Err(Error::Contract(_))));
        assert!(matches!(chrf(&["a"], &[] as &[&str]), Err(Error::Contract(_))));
    }

    #[test]
    fn smoothed_sentence_bleu_is_positive() {
        let s = sentence_bleu_add_one("a b c", "a b d");
        assert!(s.score > 0.0 && s.score < 100.0);
    }

    #[test]
    fn pretokenizer_splits_punctuation() {
        assert_eq!(pretokenize("Bonjou, kijan ou ye?"), "Bonjou , kijan ou ye ?");
        assert_eq!(pretokenize("  it's  "), "it ' s");
    }
}
