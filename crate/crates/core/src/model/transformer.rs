use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{AdapterConfig, AdapterWeights, GroupSet, ModelConfig, ParameterGroupTag, Side};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{NamedTensorStore, Tensor};

/// Additive mask value for attention logits that must receive zero weight.
const MASKED: f64 = -1e9;

/// Right-padded batch of token sequences. Positions at or beyond `lens[b]`
/// are padding and are masked out regardless of the ids stored there.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub width: usize,
}

impl TokenBatch {
    pub fn from_seqs(seqs: &[Vec<usize>], pad: usize) -> Result<Self> {
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(Error::Data("batches need at least one non-empty sequence".into()));
        }
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(pad, width - s.len()));
        }
        Ok(Self {
            ids,
            lens: seqs.iter().map(Vec::len).collect(),
            width,
        })
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.width..b * self.width + self.lens[b]]
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

fn base_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let mut out = vec![
        ("embeddings.token".to_string(), vec![c.vocab_size, d], lin(d)),
        ("embeddings.output_bias".to_string(), vec![c.vocab_size], Init::Zeros),
    ];
    let attn = |prefix: String, out: &mut Vec<(String, Vec<usize>, Init)>| {
        for p in ["q", "k", "v", "o"] {
            out.push((format!("{prefix}.{p}.weight"), vec![d, d], lin(d)));
            out.push((format!("{prefix}.{p}.bias"), vec![d], Init::Zeros));
        }
    };
    let norm = |prefix: String, out: &mut Vec<(String, Vec<usize>, Init)>| {
        out.push((format!("{prefix}.gain"), vec![d], Init::Ones));
        out.push((format!("{prefix}.bias"), vec![d], Init::Zeros));
    };
    let ffn = |prefix: String, out: &mut Vec<(String, Vec<usize>, Init)>| {
        out.push((format!("{prefix}.fc1.weight"), vec![d, c.d_ff], lin(d)));
        out.push((format!("{prefix}.fc1.bias"), vec![c.d_ff], Init::Zeros));
        out.push((format!("{prefix}.fc2.weight"), vec![c.d_ff, d], lin(c.d_ff)));
        out.push((format!("{prefix}.fc2.bias"), vec![d], Init::Zeros));
    };
    for i in 0..c.n_enc_layers {
        let p = format!("encoder.layers.{i}");
        attn(format!("{p}.self_attn"), &mut out);
        norm(format!("{p}.self_attn_norm"), &mut out);
        ffn(format!("{p}.ffn"), &mut out);
        norm(format!("{p}.ffn_norm"), &mut out);
    }
    norm("encoder.final_norm".into(), &mut out);
    for i in 0..c.n_dec_layers {
        let p = format!("decoder.layers.{i}");
        attn(format!("{p}.self_attn"), &mut out);
        norm(format!("{p}.self_attn_norm"), &mut out);
        attn(format!("{p}.cross_attn"), &mut out);
        norm(format!("{p}.cross_attn_norm"), &mut out);
        ffn(format!("{p}.ffn"), &mut out);
        norm(format!("{p}.ffn_norm"), &mut out);
    }
    norm("decoder.final_norm".into(), &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Digest identifying a base model's `(seed, config)` lineage.
pub(crate) fn model_fingerprint(config: &ModelConfig, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"soupmt/model-init/v1");
    h.update(seed.to_le_bytes());
    for v in [
        config.n_enc_layers,
        config.n_dec_layers,
        config.d_model,
        config.n_heads,
        config.d_ff,
        config.vocab_size,
        config.max_seq_len,
    ] {
        h.update((v as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn sinusoid_positions(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[pos * d + 2 * i] = angle.sin();
            pe[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    pe
}

/// Encoder-decoder transformer with optional adapters on either side.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: NamedTensorStore<T>,
    fingerprint: u64,
    enc_adapter: Option<AdapterWeights<T>>,
    dec_adapter: Option<AdapterWeights<T>>,
}

impl<T: Scalar> Model<T> {
    /// Deterministic initialization from `(config, seed)`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = NamedTensorStore::new();
        for (name, shape, init) in base_layout(&config) {
            let n: usize = shape.iter().product();
            let values: Vec<T> = match init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect()
                }
            };
            params.insert(name, Tensor::new(shape, values)?);
        }
        let fingerprint = model_fingerprint(&config, seed);
        Ok(Self {
            config,
            params,
            fingerprint,
            enc_adapter: None,
            dec_adapter: None,
        })
    }

    /// Wraps an existing base store after checking it against `config`.
    pub fn from_parts(config: ModelConfig, params: NamedTensorStore<T>, fingerprint: u64) -> Result<Self> {
        config.validate()?;
        let layout = base_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Shape(format!(
                "model store holds {} tensors, config expects {}",
                params.len(),
                layout.len()
            )));
        }
        for (name, shape, _) in &layout {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                _ => return Err(Error::Shape(format!("model tensor `{name}` missing or mis-shaped"))),
            }
        }
        Ok(Self {
            config,
            params,
            fingerprint,
            enc_adapter: None,
            dec_adapter: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Base-model parameters, excluding any attached adapters.
    pub fn base_params(&self) -> &NamedTensorStore<T> {
        &self.params
    }

    pub fn adapter(&self, side: Side) -> Option<&AdapterWeights<T>> {
        match side {
            Side::Encoder => self.enc_adapter.as_ref(),
            Side::Decoder => self.dec_adapter.as_ref(),
        }
    }

    fn adapter_slot(&mut self, side: Side) -> &mut Option<AdapterWeights<T>> {
        match side {
            Side::Encoder => &mut self.enc_adapter,
            Side::Decoder => &mut self.dec_adapter,
        }
    }

    /// Attaches `adapter` to one side, replacing any previous one.
    pub fn attach(&mut self, side: Side, adapter: AdapterWeights<T>) -> Result<()> {
        let expected = AdapterConfig::for_side(&self.config, side);
        let got = adapter.config();
        if got.d_model != expected.d_model || got.bottleneck != expected.bottleneck {
            return Err(Error::Shape(format!(
                "adapter width {}x{} incompatible with model {}x{}",
                got.d_model, got.bottleneck, expected.d_model, expected.bottleneck
            )));
        }
        if got.n_layers != expected.n_layers {
            return Err(Error::Shape(format!(
                "{}-layer adapter cannot attach to {}-layer {side}",
                got.n_layers, expected.n_layers
            )));
        }
        *self.adapter_slot(side) = Some(adapter);
        Ok(())
    }

    /// Attaches (or leaves detached, for `None`) both sides at once.
    pub fn attach_adapters(&mut self, enc: Option<AdapterWeights<T>>, dec: Option<AdapterWeights<T>>) -> Result<()> {
        if let Some(a) = enc {
            self.attach(Side::Encoder, a)?;
        }
        if let Some(a) = dec {
            self.attach(Side::Decoder, a)?;
        }
        Ok(())
    }

    pub fn detach(&mut self, side: Side) -> Option<AdapterWeights<T>> {
        self.adapter_slot(side).take()
    }

    /// All parameters under their fully qualified names, adapters included.
    pub fn all_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        for side in [Side::Encoder, Side::Decoder] {
            if let Some(a) = self.adapter(side) {
                out.extend(a.store().iter().map(|(n, t)| (format!("{side}.adapter.{n}"), t)));
            }
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        for side in [Side::Encoder, Side::Decoder] {
            if let Some(rest) = name
                .strip_prefix(side.prefix())
                .and_then(|r| r.strip_prefix(".adapter."))
            {
                return self.adapter(side)?.store().get(rest);
            }
        }
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        for side in [Side::Encoder, Side::Decoder] {
            if let Some(rest) = name
                .strip_prefix(side.prefix())
                .and_then(|r| r.strip_prefix(".adapter."))
            {
                return self.adapter_slot(side).as_mut()?.tensor_mut(rest);
            }
        }
        self.params.get_mut(name)
    }

    /// The parameters carrying `tag`.
    pub fn parameter_group(&self, tag: ParameterGroupTag) -> Vec<(String, &Tensor<T>)> {
        self.all_params()
            .into_iter()
            .filter(|(n, _)| ParameterGroupTag::of(n).map(|t| t == tag).unwrap_or(false))
            .collect()
    }

    /// Copies the values of every tensor in `overlay` into the base store.
    pub fn load_overlay(&mut self, overlay: &NamedTensorStore<T>) -> Result<()> {
        for (name, t) in overlay.iter() {
            let dst = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("overlay tensor `{name}` not in model")))?;
            if dst.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "overlay tensor `{name}` has shape {:?}",
                    t.shape()
                )));
            }
            dst.values_mut().copy_from_slice(t.values());
        }
        Ok(())
    }

    fn check_batch(&self, b: &TokenBatch) -> Result<()> {
        if b.width > self.config.max_seq_len {
            return Err(Error::Length {
                len: b.width,
                max: self.config.max_seq_len,
            });
        }
        if b.lens.iter().any(|&l| l == 0 || l > b.width) || b.ids.len() != b.width * b.batch() {
            return Err(Error::Shape("malformed token batch".into()));
        }
        Ok(())
    }

    /// Logits of shape `(batch, tgt_width, vocab)`.
    pub fn forward(&self, tape: &mut Tape<T>, src: &TokenBatch, tgt: &TokenBatch, trainable: GroupSet) -> Result<Var> {
        let mut ctx = Ctx::new(self, trainable);
        let enc = self.encode_with(&mut ctx, tape, src)?;
        self.decode_with(&mut ctx, tape, enc, &src.lens, tgt)
    }

    /// Encoder output `(batch, src_width, d_model)`.
    pub fn encode(&self, tape: &mut Tape<T>, src: &TokenBatch, trainable: GroupSet) -> Result<Var> {
        let mut ctx = Ctx::new(self, trainable);
        self.encode_with(&mut ctx, tape, src)
    }

    /// Decoder logits given an already computed encoder output.
    pub fn decode_logits(
        &self,
        tape: &mut Tape<T>,
        enc: Var,
        src_lens: &[usize],
        tgt: &TokenBatch,
        trainable: GroupSet,
    ) -> Result<Var> {
        let mut ctx = Ctx::new(self, trainable);
        self.decode_with(&mut ctx, tape, enc, src_lens, tgt)
    }

    fn embed(&self, ctx: &mut Ctx<'_, T>, tape: &mut Tape<T>, b: &TokenBatch) -> Result<Var> {
        let d = self.config.d_model;
        let table = ctx.p(tape, "embeddings.token")?;
        let x = tape.embedding(table, &b.ids, &[b.batch(), b.width])?;
        let x = tape.scale(x, T::from_f64_lossy((d as f64).sqrt()))?;
        let pos: Vec<T> = sinusoid_positions(b.width, d)
            .into_iter()
            .map(T::from_f64_lossy)
            .collect();
        let pos = tape.constant(vec![b.width, d], pos)?;
        let x = tape.add(x, pos)?;
        tape.dropout(x, self.config.dropout_p)
    }

    fn encode_with(&self, ctx: &mut Ctx<'_, T>, tape: &mut Tape<T>, src: &TokenBatch) -> Result<Var> {
        self.check_batch(src)?;
        let mask = self.attention_mask(tape, src.batch(), src.width, src.width, &src.lens, false)?;
        let mut x = self.embed(ctx, tape, src)?;
        for i in 0..self.config.n_enc_layers {
            let p = format!("encoder.layers.{i}");
            let h = ctx.norm(tape, x, &format!("{p}.self_attn_norm"))?;
            let a = self.attention(ctx, tape, h, h, mask, &format!("{p}.self_attn"))?;
            let a = tape.dropout(a, self.config.dropout_p)?;
            x = tape.add(x, a)?;
            x = self.ffn_block(ctx, tape, x, &p)?;
            x = self.adapter_block(ctx, tape, x, Side::Encoder, i)?;
        }
        ctx.norm(tape, x, "encoder.final_norm")
    }

    fn decode_with(
        &self,
        ctx: &mut Ctx<'_, T>,
        tape: &mut Tape<T>,
        enc: Var,
        src_lens: &[usize],
        tgt: &TokenBatch,
    ) -> Result<Var> {
        self.check_batch(tgt)?;
        let enc_shape = tape.shape(enc).to_vec();
        if enc_shape.len() != 3 || enc_shape[0] != tgt.batch() || src_lens.len() != tgt.batch() {
            return Err(Error::Shape(format!(
                "encoder output {enc_shape:?} does not match target batch of {}",
                tgt.batch()
            )));
        }
        let src_width = enc_shape[1];
        let self_mask = self.attention_mask(tape, tgt.batch(), tgt.width, tgt.width, &tgt.lens, true)?;
        let cross_mask = self.attention_mask(tape, tgt.batch(), tgt.width, src_width, src_lens, false)?;
        let mut x = self.embed(ctx, tape, tgt)?;
        for i in 0..self.config.n_dec_layers {
            let p = format!("decoder.layers.{i}");
            let h = ctx.norm(tape, x, &format!("{p}.self_attn_norm"))?;
            let a = self.attention(ctx, tape, h, h, self_mask, &format!("{p}.self_attn"))?;
            let a = tape.dropout(a, self.config.dropout_p)?;
            x = tape.add(x, a)?;
            let h = ctx.norm(tape, x, &format!("{p}.cross_attn_norm"))?;
            let a = self.attention(ctx, tape, h, enc, cross_mask, &format!("{p}.cross_attn"))?;
            let a = tape.dropout(a, self.config.dropout_p)?;
            x = tape.add(x, a)?;
            x = self.ffn_block(ctx, tape, x, &p)?;
            x = self.adapter_block(ctx, tape, x, Side::Decoder, i)?;
        }
        let x = ctx.norm(tape, x, "decoder.final_norm")?;
        let table = ctx.p(tape, "embeddings.token")?;
        let table_t = tape.permute(table, &[1, 0])?;
        let logits = tape.matmul(x, table_t)?;
        let bias = ctx.p(tape, "embeddings.output_bias")?;
        tape.add(logits, bias)
    }

    fn ffn_block(&self, ctx: &mut Ctx<'_, T>, tape: &mut Tape<T>, x: Var, layer: &str) -> Result<Var> {
        let h = ctx.norm(tape, x, &format!("{layer}.ffn_norm"))?;
        let h = ctx.linear(tape, h, &format!("{layer}.ffn.fc1"))?;
        let h = tape.relu(h)?;
        let h = ctx.linear(tape, h, &format!("{layer}.ffn.fc2"))?;
        let h = tape.dropout(h, self.config.dropout_p)?;
        tape.add(x, h)
    }

    fn adapter_block(&self, ctx: &mut Ctx<'_, T>, tape: &mut Tape<T>, x: Var, side: Side, layer: usize) -> Result<Var> {
        if self.adapter(side).is_none() {
            return Ok(x);
        }
        let p = format!("{side}.adapter.layers.{layer}");
        let h = ctx.norm(tape, x, &format!("{p}.norm"))?;
        let h = ctx.linear(tape, h, &format!("{p}.down"))?;
        let h = tape.relu(h)?;
        let h = ctx.linear(tape, h, &format!("{p}.up"))?;
        tape.add(x, h)
    }

    fn attention(
        &self,
        ctx: &mut Ctx<'_, T>,
        tape: &mut Tape<T>,
        q_in: Var,
        kv_in: Var,
        mask: Var,
        prefix: &str,
    ) -> Result<Var> {
        let (b, lq) = (tape.shape(q_in)[0], tape.shape(q_in)[1]);
        let lk = tape.shape(kv_in)[1];
        let h = self.config.n_heads;
        let d = self.config.d_model;
        let dh = d / h;
        let q = ctx.linear(tape, q_in, &format!("{prefix}.q"))?;
        let q = tape.reshape(q, &[b, lq, h, dh])?;
        let q = tape.permute(q, &[0, 2, 1, 3])?;
        let k = ctx.linear(tape, kv_in, &format!("{prefix}.k"))?;
        let k = tape.reshape(k, &[b, lk, h, dh])?;
        let k = tape.permute(k, &[0, 2, 3, 1])?;
        let v = ctx.linear(tape, kv_in, &format!("{prefix}.v"))?;
        let v = tape.reshape(v, &[b, lk, h, dh])?;
        let v = tape.permute(v, &[0, 2, 1, 3])?;
        let s = tape.matmul(q, k)?;
        let s = tape.scale(s, T::from_f64_lossy(1.0 / (dh as f64).sqrt()))?;
        let s = tape.add(s, mask)?;
        let w = tape.softmax(s)?;
        let o = tape.matmul(w, v)?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b, lq, d])?;
        ctx.linear(tape, o, &format!("{prefix}.o"))
    }

    /// `(batch, heads, lq, lk)` additive mask hiding padded keys and, when
    /// `causal`, keys after the query position.
    fn attention_mask(
        &self,
        tape: &mut Tape<T>,
        batch: usize,
        lq: usize,
        lk: usize,
        key_lens: &[usize],
        causal: bool,
    ) -> Result<Var> {
        let h = self.config.n_heads;
        let masked = T::from_f64_lossy(MASKED);
        let mut m = vec![T::zero(); batch * h * lq * lk];
        for b in 0..batch {
            for head in 0..h {
                for i in 0..lq {
                    let row = ((b * h + head) * lq + i) * lk;
                    for j in 0..lk {
                        if j >= key_lens[b] || (causal && j > i) {
                            m[row + j] = masked;
                        }
                    }
                }
            }
        }
        tape.constant(vec![batch, h, lq, lk], m)
    }
}

/// Per-forward binding of parameter names to tape leaves.
struct Ctx<'m, T> {
    model: &'m Model<T>,
    trainable: GroupSet,
    bound: HashMap<String, Var>,
}

impl<'m, T: Scalar> Ctx<'m, T> {
    fn new(model: &'m Model<T>, trainable: GroupSet) -> Self {
        Self {
            model,
            trainable,
            bound: HashMap::new(),
        }
    }

    fn p(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .model
            .param(name)
            .ok_or_else(|| Error::Contract(format!("model has no parameter `{name}`")))?;
        let requires_grad = self.trainable.contains(ParameterGroupTag::of(name)?);
        let v = tape.param(name, t, requires_grad);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn linear(&mut self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(tape, &format!("{prefix}.weight"))?;
        let b = self.p(tape, &format!("{prefix}.bias"))?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    fn norm(&mut self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(tape, &format!("{prefix}.gain"))?;
        let b = self.p(tape, &format!("{prefix}.bias"))?;
        tape.layer_norm(x, g, b)
    }
}
