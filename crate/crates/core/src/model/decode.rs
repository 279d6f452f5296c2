use std::cmp::Ordering;

use super::{GroupSet, Model, TokenBatch};
use crate::autodiff::{log_sum_exp, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Upper bound on generated tokens, end-of-sequence included.
    pub max_len: usize,
    pub length_penalty: f64,
    pub eos: usize,
}

impl DecodeConfig {
    pub fn new(eos: usize) -> Self {
        Self {
            beam_size: 4,
            max_len: 64,
            length_penalty: 0.6,
            eos,
        }
    }
}

struct Encoded<T> {
    enc: Tensor<T>,
    src_len: usize,
}

fn encode_one<T: Scalar>(model: &Model<T>, src: &[usize]) -> Result<Encoded<T>> {
    let batch = TokenBatch::from_seqs(&[src.to_vec()], 0)?;
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &batch, GroupSet::NONE)?;
    Ok(Encoded {
        enc: tape.tensor(enc),
        src_len: src.len(),
    })
}

/// Log-probabilities of the next token for each prefix (all same length).
fn next_log_probs<T: Scalar>(model: &Model<T>, encoded: &Encoded<T>, prefixes: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
    let n = prefixes.len();
    let width = prefixes[0].len();
    let mut tape = Tape::new();
    let enc_vals = encoded.enc.values();
    let mut tiled = Vec::with_capacity(enc_vals.len() * n);
    for _ in 0..n {
        tiled.extend_from_slice(enc_vals);
    }
    let mut shape = encoded.enc.shape().to_vec();
    shape[0] = n;
    let enc = tape.constant(shape, tiled)?;
    let tgt = TokenBatch::from_seqs(&prefixes.iter().map(|p| p.to_vec()).collect::<Vec<_>>(), 0)?;
    let logits = model.decode_logits(&mut tape, enc, &vec![encoded.src_len; n], &tgt, GroupSet::NONE)?;
    let v = model.config().vocab_size;
    let vals = tape.value(logits);
    Ok((0..n)
        .map(|b| {
            let row = &vals[(b * width + width - 1) * v..(b * width + width) * v];
            let lse = log_sum_exp(row);
            row.iter().map(|&x| (x - lse).to_f64_lossy()).collect()
        })
        .collect())
}

fn generation_budget<T: Scalar>(model: &Model<T>, prefix: &[usize], max_len: usize) -> Result<usize> {
    if prefix.is_empty() {
        return Err(Error::Contract("decoding needs a non-empty decoder prefix".into()));
    }
    let room = (model.config().max_seq_len + 1).saturating_sub(prefix.len());
    Ok(max_len.min(room))
}

/// Argmax decoding. Returns generated tokens without the prefix or the
/// end-of-sequence token.
pub fn greedy_decode<T: Scalar>(
    model: &Model<T>,
    src: &[usize],
    prefix: &[usize],
    max_len: usize,
    eos: usize,
) -> Result<Vec<usize>> {
    let budget = generation_budget(model, prefix, max_len)?;
    let encoded = encode_one(model, src)?;
    let mut seq = prefix.to_vec();
    for _ in 0..budget {
        let lp = next_log_probs(model, &encoded, &[&seq])?;
        let best = argmax(&lp[0]);
        if best == eos {
            break;
        }
        seq.push(best);
    }
    Ok(seq[prefix.len()..].to_vec())
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Beam search with length-normalized final scores
/// `log p / len^length_penalty`, `len` counting the end-of-sequence token.
pub fn beam_search<T: Scalar>(
    model: &Model<T>,
    src: &[usize],
    prefix: &[usize],
    cfg: &DecodeConfig,
) -> Result<Vec<usize>> {
    if cfg.beam_size == 0 {
        return Err(Error::Contract("beam_size must be at least 1".into()));
    }
    let budget = generation_budget(model, prefix, cfg.max_len)?;
    let encoded = encode_one(model, src)?;
    let norm = |score: f64, len: usize| score / (len.max(1) as f64).powf(cfg.length_penalty);

    let mut alive: Vec<(Vec<usize>, f64)> = vec![(prefix.to_vec(), 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for step in 0..budget {
        let refs: Vec<&[usize]> = alive.iter().map(|(s, _)| s.as_slice()).collect();
        let lps = next_log_probs(model, &encoded, &refs)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * lps[0].len());
        for (b, lp) in lps.iter().enumerate() {
            for (tok, &l) in lp.iter().enumerate() {
                cands.push((alive[b].1 + l, b, tok));
            }
        }
        cands.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(Ordering::Equal)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
        let mut next = Vec::with_capacity(cfg.beam_size);
        for &(score, b, tok) in cands.iter().take(cfg.beam_size) {
            let mut seq = alive[b].0.clone();
            if tok == cfg.eos {
                finished.push((seq, norm(score, step + 1)));
            } else {
                seq.push(tok);
                next.push((seq, score));
            }
        }
        alive = next;
        if alive.is_empty() || finished.len() >= cfg.beam_size {
            break;
        }
    }
    // hypotheses cut off by the length budget compete unterminated
    if finished.is_empty() {
        finished = alive
            .into_iter()
            .map(|(s, score)| {
                let len = s.len() - prefix.len();
                (s, norm(score, len))
            })
            .collect();
    }
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(j.cmp(i)))
        .map(|(_, h)| h.0.clone())
        .unwrap_or_else(|| prefix.to_vec());
    Ok(best[prefix.len()..].to_vec())
}
