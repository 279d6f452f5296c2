//! Glue between text files, the tokenizer, and the trainers.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{beam_search, DecodeConfig, Model};
use crate::scalar::Scalar;
use crate::tokenizer::{Vocabulary, EOS, MASK};
use crate::training::{DenoisingData, ParallelData};

pub fn denoising_data<S: AsRef<str>>(vocab: &Vocabulary, lines: &[S], lang: &str) -> Result<DenoisingData> {
    Ok(DenoisingData {
        sequences: lines.iter().map(|l| vocab.encode(l.as_ref())).collect(),
        lang_tag: vocab.lang_id(lang)?,
        mask_id: MASK,
        eos: EOS,
    })
}

pub fn parallel_data(vocab: &Vocabulary, pairs: &[(String, String)], src: &str, tgt: &str) -> Result<ParallelData> {
    Ok(ParallelData {
        pairs: pairs.iter().map(|(s, t)| (vocab.encode(s), vocab.encode(t))).collect(),
        src_tag: vocab.lang_id(src)?,
        tgt_tag: vocab.lang_id(tgt)?,
        eos: EOS,
    })
}

/// Beam-search translation of each line, in the same layout the trainers
/// feed the encoder: `[src tag] content [eos]`, decoder primed with the
/// target tag.
pub fn translate_lines<T: Scalar, S: AsRef<str> + Sync>(
    model: &Model<T>,
    vocab: &Vocabulary,
    lines: &[S],
    src: &str,
    tgt: &str,
    cfg: &DecodeConfig,
) -> Result<Vec<String>> {
    let src_tag = vocab.lang_id(src)?;
    let tgt_tag = vocab.lang_id(tgt)?;
    let max_content = model.config().max_seq_len.saturating_sub(2).max(1);
    lines
        .par_iter()
        .map(|line| {
            let ids = vocab.encode(line.as_ref());
            let mut input = vec![src_tag];
            input.extend_from_slice(&ids[..ids.len().min(max_content)]);
            input.push(EOS);
            let out = beam_search(model, &input, &[tgt_tag], cfg)?;
            Ok(vocab.decode(&out))
        })
        .collect()
}
