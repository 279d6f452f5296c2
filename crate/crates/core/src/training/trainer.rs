use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{lr_schedule, Adam, TrainConfig, TrainLog};
use crate::autodiff::{Tape, Var};
use crate::corpus::apply_noise_with;
use crate::error::{Error, Result};
use crate::model::{AdapterWeights, GroupSet, Model, ParameterGroupTag, Side, TokenBatch};
use crate::scalar::Scalar;
use crate::tensor::NamedTensorStore;

/// One teacher-forced sequence pair. `tgt_out` is `tgt_in` shifted left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
}

/// Monolingual token sequences (content only, no tags or EOS).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoisingData {
    pub sequences: Vec<Vec<usize>>,
    pub lang_tag: usize,
    pub mask_id: usize,
    pub eos: usize,
}

/// Source/target token sequence pairs (content only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelData {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub src_tag: usize,
    pub tgt_tag: usize,
    pub eos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub steps: usize,
    pub best_step: usize,
    pub best_dev_loss: f64,
    pub stopped_early: bool,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |h, &p| splitmix(h ^ p))
}

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const DEV_NOISE_STREAM: u64 = 4;
const DROPOUT_STREAM: u64 = 5;

trait ExampleSource {
    fn len(&self) -> usize;
    fn example(&self, idx: usize, epoch: usize) -> Result<Example>;
    fn dev_example(&self, idx: usize) -> Result<Example>;
}

struct Denoising<'a> {
    data: &'a DenoisingData,
    max_content: usize,
    cfg: &'a TrainConfig,
    stream: u64,
}

impl Denoising<'_> {
    fn build(&self, idx: usize, rng: &mut ChaCha8Rng) -> Result<Example> {
        let d = self.data;
        let seq = &d.sequences[idx][..d.sequences[idx].len().min(self.max_content)];
        let (noised, orig) = apply_noise_with(
            seq,
            self.cfg.noise.mask_ratio,
            self.cfg.noise.span_lambda,
            d.mask_id,
            rng,
        )?;
        let mut src = vec![d.lang_tag];
        src.extend(noised);
        src.push(d.eos);
        let mut tgt_in = vec![d.lang_tag];
        tgt_in.extend_from_slice(&orig);
        let mut tgt_out = orig;
        tgt_out.push(d.eos);
        Ok(Example { src, tgt_in, tgt_out })
    }
}

impl ExampleSource for Denoising<'_> {
    fn len(&self) -> usize {
        self.data.sequences.len()
    }

    fn example(&self, idx: usize, epoch: usize) -> Result<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
            self.cfg.seed,
            NOISE_STREAM,
            self.stream,
            epoch as u64,
            idx as u64,
        ]));
        self.build(idx, &mut rng)
    }

    fn dev_example(&self, idx: usize) -> Result<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.cfg.seed, DEV_NOISE_STREAM, self.stream, idx as u64]));
        self.build(idx, &mut rng)
    }
}

struct Parallel<'a> {
    data: &'a ParallelData,
    max_content: usize,
}

impl ExampleSource for Parallel<'_> {
    fn len(&self) -> usize {
        self.data.pairs.len()
    }

    fn example(&self, idx: usize, _epoch: usize) -> Result<Example> {
        let d = self.data;
        let (s, t) = &d.pairs[idx];
        let s = &s[..s.len().min(self.max_content)];
        let t = &t[..t.len().min(self.max_content)];
        let mut src = vec![d.src_tag];
        src.extend_from_slice(s);
        src.push(d.eos);
        let mut tgt_in = vec![d.tgt_tag];
        tgt_in.extend_from_slice(t);
        let mut tgt_out = t.to_vec();
        tgt_out.push(d.eos);
        Ok(Example { src, tgt_in, tgt_out })
    }

    fn dev_example(&self, idx: usize) -> Result<Example> {
        self.example(idx, 0)
    }
}

/// Concatenation of several example sources.
struct Mixture<'a> {
    parts: Vec<Box<dyn ExampleSource + 'a>>,
}

impl Mixture<'_> {
    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (k, p) in self.parts.iter().enumerate() {
            if idx < p.len() {
                return (k, idx);
            }
            idx -= p.len();
        }
        panic!("mixture index out of range")
    }
}

impl ExampleSource for Mixture<'_> {
    fn len(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    fn example(&self, idx: usize, epoch: usize) -> Result<Example> {
        let (k, i) = self.locate(idx);
        self.parts[k].example(i, epoch)
    }

    fn dev_example(&self, idx: usize) -> Result<Example> {
        let (k, i) = self.locate(idx);
        self.parts[k].dev_example(i)
    }
}

fn batch_loss<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    exs: &[&Example],
    trainable: GroupSet,
) -> Result<(Var, usize)> {
    let src = TokenBatch::from_seqs(&exs.iter().map(|e| e.src.clone()).collect::<Vec<_>>(), 0)?;
    let tgt = TokenBatch::from_seqs(&exs.iter().map(|e| e.tgt_in.clone()).collect::<Vec<_>>(), 0)?;
    let mut targets = Vec::with_capacity(tgt.batch() * tgt.width);
    let mut n_tokens = 0;
    for e in exs {
        if e.tgt_out.len() != e.tgt_in.len() {
            return Err(Error::Shape("tgt_out must align with tgt_in".into()));
        }
        targets.extend(e.tgt_out.iter().map(|&t| Some(t)));
        targets.extend(std::iter::repeat_n(None, tgt.width - e.tgt_out.len()));
        n_tokens += e.tgt_out.len();
    }
    let logits = model.forward(tape, &src, &tgt, trainable)?;
    Ok((tape.cross_entropy(logits, &targets)?, n_tokens))
}

/// Token-weighted mean cross-entropy over `examples`, without dropout.
pub fn dev_loss<T: Scalar>(model: &Model<T>, examples: &[Example], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no evaluation examples".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (loss, n) = batch_loss(model, &mut tape, &refs, GroupSet::NONE)?;
        total += tape.item(loss).to_f64_lossy() * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Gradients of the per-token mean loss over all micro-batches together:
/// each micro-batch's mean-loss gradient is weighted by its token share.
pub fn accumulated_gradients<T: Scalar>(
    model: &Model<T>,
    trainable: GroupSet,
    micro_batches: &[Vec<&Example>],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<(String, Vec<T>)>)> {
    let mut sums: BTreeMap<String, Vec<T>> = BTreeMap::new();
    let total_tokens: usize = micro_batches
        .iter()
        .flat_map(|b| b.iter().map(|e| e.tgt_out.len()))
        .sum();
    if total_tokens == 0 {
        return Err(Error::Data("micro-batches hold no target tokens".into()));
    }
    let mut loss_total = 0.0;
    for (k, mb) in micro_batches.iter().enumerate() {
        let mut tape = match dropout_seed {
            Some(seed) => Tape::training(mix(&[seed, k as u64])),
            None => Tape::new(),
        };
        let (loss, n) = batch_loss(model, &mut tape, mb, trainable)?;
        let w = n as f64 / total_tokens as f64;
        loss_total += tape.item(loss).to_f64_lossy() * w;
        let wt = T::from_f64_lossy(w);
        let grads = tape.backward(loss)?;
        for (name, g) in grads.named() {
            let acc = sums.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
            for (a, &x) in acc.iter_mut().zip(g) {
                *a += x * wt;
            }
        }
    }
    Ok((loss_total, sums.into_iter().collect()))
}

fn snapshot<T: Scalar>(model: &Model<T>, trainable: GroupSet) -> Vec<(String, Vec<T>)> {
    model
        .all_params()
        .into_iter()
        .filter(|(n, _)| ParameterGroupTag::of(n).is_ok_and(|t| trainable.contains(t)))
        .map(|(n, t)| (n, t.values().to_vec()))
        .collect()
}

fn restore<T: Scalar>(model: &mut Model<T>, snap: &[(String, Vec<T>)]) -> Result<()> {
    for (name, vals) in snap {
        let t = model
            .param_mut(name)
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` vanished during training")))?;
        t.values_mut().copy_from_slice(vals);
    }
    Ok(())
}

type Hook<'h, T> = &'h mut dyn FnMut(usize, &mut Model<T>);
type Guard<'g, T> = &'g dyn Fn(&Model<T>) -> Result<()>;

fn run<T: Scalar>(
    model: &mut Model<T>,
    trainable: GroupSet,
    source: &dyn ExampleSource,
    cfg: &TrainConfig,
    epoch_limit: Option<usize>,
    hook: Hook<'_, T>,
    guard: Guard<'_, T>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = source.len();
    if n < 2 {
        return Err(Error::Data(format!("training needs at least 2 examples, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, SPLIT_STREAM])));
    let n_dev = ((n as f64 * cfg.dev_fraction).round() as usize).clamp(1, n - 1);
    let (dev_idx, train_idx) = idx.split_at(n_dev);
    let dev: Vec<Example> = dev_idx.iter().map(|&i| source.dev_example(i)).collect::<Result<_>>()?;

    let shuffled = |epoch: usize| {
        let mut o = train_idx.to_vec();
        o.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[
            cfg.seed,
            SHUFFLE_STREAM,
            epoch as u64,
        ])));
        o
    };

    let mut log = TrainLog::new();
    guard(model)?;
    let mut best_dev_loss = dev_loss(model, &dev, cfg.batch_size)?;
    log.log_dev(0, best_dev_loss)?;
    let mut best_step = 0;
    let mut best = snapshot(model, trainable);
    let mut bad_evals = 0;
    let mut stopped_early = false;

    let mut adam = Adam::new();
    let (mut epoch, mut order, mut cursor) = (0, shuffled(0), 0);
    let mut step = 0;
    let mut exhausted = false;
    let mut last_eval = 0;
    while step < cfg.max_steps && !exhausted {
        hook(step, model);
        guard(model)?;
        let mut micro: Vec<Vec<usize>> = Vec::with_capacity(cfg.grad_accum);
        'fill: for _ in 0..cfg.grad_accum {
            let mut b = Vec::with_capacity(cfg.batch_size);
            while b.len() < cfg.batch_size {
                if cursor == order.len() {
                    if epoch_limit.is_some_and(|l| epoch + 1 >= l) {
                        exhausted = true;
                        if !b.is_empty() {
                            micro.push(b);
                        }
                        break 'fill;
                    }
                    epoch += 1;
                    order = shuffled(epoch);
                    cursor = 0;
                }
                b.push(order[cursor]);
                cursor += 1;
            }
            micro.push(b);
        }
        if micro.is_empty() {
            break;
        }
        let examples: Vec<Vec<Example>> = micro
            .iter()
            .map(|b| b.iter().map(|&i| source.example(i, epoch)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let refs: Vec<Vec<&Example>> = examples.iter().map(|b| b.iter().collect()).collect();
        let (loss, grads) = accumulated_gradients(
            model,
            trainable,
            &refs,
            Some(mix(&[cfg.seed, DROPOUT_STREAM, step as u64])),
        )?;
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|x| x.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss or gradient at step {}",
                step + 1
            )));
        }
        step += 1;
        let lr = lr_schedule(step, cfg);
        adam.step(model, &grads, lr)?;
        log.log_train(step, loss, norm, lr)?;

        let final_step = step == cfg.max_steps || exhausted;
        if step % cfg.eval_interval == 0 || final_step {
            last_eval = step;
            let d = dev_loss(model, &dev, cfg.batch_size)?;
            log.log_dev(step, d)?;
            if d < best_dev_loss {
                best_dev_loss = d;
                best_step = step;
                best = snapshot(model, trainable);
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= cfg.early_stop_patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    debug_assert!(step == 0 || last_eval == step);
    if cfg.restore_best && best_step != step {
        restore(model, &best)?;
    }
    Ok(TrainOutcome {
        log,
        steps: step,
        best_step,
        best_dev_loss,
        stopped_early,
    })
}

fn max_content<T: Scalar>(model: &Model<T>) -> usize {
    model.config().max_seq_len.saturating_sub(2).max(1)
}

/// Multilingual training of every base-model group (no adapters) on a mix
/// of denoising and translation data, standing in for a pretrained
/// many-to-many model.
pub fn pretrain_base<T: Scalar>(
    model: &mut Model<T>,
    mono: &[DenoisingData],
    parallel: &[ParallelData],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if model.adapter(Side::Encoder).is_some() || model.adapter(Side::Decoder).is_some() {
        return Err(Error::Contract(
            "base pretraining expects a model without adapters".into(),
        ));
    }
    let mono: Vec<DenoisingData> = mono
        .iter()
        .map(|d| DenoisingData {
            sequences: d.sequences.iter().filter(|s| !s.is_empty()).cloned().collect(),
            ..d.clone()
        })
        .collect();
    let parallel: Vec<ParallelData> = parallel
        .iter()
        .map(|d| ParallelData {
            pairs: d
                .pairs
                .iter()
                .filter(|(s, t)| !s.is_empty() && !t.is_empty())
                .cloned()
                .collect(),
            ..d.clone()
        })
        .collect();
    let mc = max_content(model);
    let mut parts: Vec<Box<dyn ExampleSource + '_>> = Vec::new();
    for (k, d) in mono.iter().enumerate() {
        parts.push(Box::new(Denoising {
            data: d,
            max_content: mc,
            cfg,
            stream: k as u64,
        }));
    }
    for d in &parallel {
        parts.push(Box::new(Parallel {
            data: d,
            max_content: mc,
        }));
    }
    let source = Mixture { parts };
    if source.len() == 0 {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    let trainable = [
        ParameterGroupTag::Encoder,
        ParameterGroupTag::Decoder,
        ParameterGroupTag::CrossAttention,
        ParameterGroupTag::Embeddings,
    ]
    .into_iter()
    .collect();
    run(model, trainable, &source, cfg, None, &mut |_, _| {}, &|_| Ok(()))
}

/// Trains `adapter` on `side` of an otherwise adapter-free model with the
/// denoising objective. Only adapter parameters change; the model is left
/// without adapters.
pub fn train_denoising_adapter<T: Scalar>(
    model: &mut Model<T>,
    adapter: AdapterWeights<T>,
    side: Side,
    data: &DenoisingData,
    cfg: &TrainConfig,
) -> Result<(AdapterWeights<T>, TrainOutcome)> {
    if data.sequences.iter().all(Vec::is_empty) {
        return Err(Error::Data("denoising corpus is empty".into()));
    }
    if model.adapter(Side::Encoder).is_some() || model.adapter(Side::Decoder).is_some() {
        return Err(Error::Contract(
            "adapter pretraining expects a model without adapters".into(),
        ));
    }
    let data = DenoisingData {
        sequences: data.sequences.iter().filter(|s| !s.is_empty()).cloned().collect(),
        ..data.clone()
    };
    model.attach(side, adapter)?;
    let source = Denoising {
        data: &data,
        max_content: max_content(model),
        cfg,
        stream: 0,
    };
    let guard = |m: &Model<T>| {
        if m.adapter(side).is_none() {
            return Err(Error::Contract(format!("{side} adapter detached during training")));
        }
        Ok(())
    };
    let result = run(
        model,
        GroupSet::only(side.adapter_tag()),
        &source,
        cfg,
        None,
        &mut |_, _| {},
        &guard,
    );
    let adapter = model.detach(side);
    let outcome = result?;
    let adapter = adapter.ok_or_else(|| Error::Contract(format!("{side} adapter missing after training")))?;
    Ok((adapter, outcome))
}

/// Cross-attention fine-tuning with both adapters attached and frozen.
/// The model keeps the adapters and the updated cross-attention weights;
/// the returned store holds just the cross-attention group.
pub fn caft<T: Scalar>(
    model: &mut Model<T>,
    enc_adapter: AdapterWeights<T>,
    dec_adapter: AdapterWeights<T>,
    data: &ParallelData,
    cfg: &TrainConfig,
) -> Result<(NamedTensorStore<T>, TrainOutcome)> {
    caft_with_hook(model, enc_adapter, dec_adapter, data, cfg, &mut |_, _| {})
}

/// [`caft`] with `hook(step, model)` invoked before every optimizer step.
pub fn caft_with_hook<T: Scalar>(
    model: &mut Model<T>,
    enc_adapter: AdapterWeights<T>,
    dec_adapter: AdapterWeights<T>,
    data: &ParallelData,
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(usize, &mut Model<T>),
) -> Result<(NamedTensorStore<T>, TrainOutcome)> {
    let data = ParallelData {
        pairs: data
            .pairs
            .iter()
            .filter(|(s, t)| !s.is_empty() && !t.is_empty())
            .cloned()
            .collect(),
        ..data.clone()
    };
    if data.pairs.is_empty() {
        return Err(Error::Data("parallel corpus is empty".into()));
    }
    model.attach_adapters(Some(enc_adapter), Some(dec_adapter))?;
    let source = Parallel {
        data: &data,
        max_content: max_content(model),
    };
    let guard = |m: &Model<T>| {
        if m.adapter(Side::Encoder).is_none() || m.adapter(Side::Decoder).is_none() {
            return Err(Error::Contract(
                "adapters must stay attached during cross-attention fine-tuning".into(),
            ));
        }
        Ok(())
    };
    let outcome = run(
        model,
        GroupSet::only(ParameterGroupTag::CrossAttention),
        &source,
        cfg,
        Some(cfg.epochs),
        hook,
        &guard,
    )?;
    let store = model
        .parameter_group(ParameterGroupTag::CrossAttention)
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    Ok((store, outcome))
}
