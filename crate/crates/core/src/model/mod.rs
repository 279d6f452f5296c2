//! Encoder-decoder transformer with residual bottleneck adapters.

mod adapter;
mod decode;
mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adapter::{make_untrained_adapter, AdapterConfig, AdapterWeights};
pub use decode::{beam_search, greedy_decode, DecodeConfig};
pub use transformer::{Model, TokenBatch};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub adapter_bottleneck: usize,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            vocab_size: 4000,
            max_seq_len: 128,
            adapter_bottleneck: 64,
            dropout_p: 0.1,
        }
    }
}

impl ModelConfig {
    /// The 600M distilled reference architecture (12+12 layers, 16 heads,
    /// width 1024). Expressible, not meant to be trained here.
    pub fn full_scale() -> Self {
        Self {
            n_enc_layers: 12,
            n_dec_layers: 12,
            d_model: 1024,
            n_heads: 16,
            d_ff: 4096,
            vocab_size: 256_000,
            max_seq_len: 512,
            adapter_bottleneck: 256,
            dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("adapter_bottleneck", self.adapter_bottleneck),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.adapter_bottleneck >= self.d_model {
            return Err(Error::Config(format!(
                "adapter_bottleneck {} must be below d_model {}",
                self.adapter_bottleneck, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0,1)", self.dropout_p)));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self, side: Side) -> usize {
        match side {
            Side::Encoder => self.n_enc_layers,
            Side::Decoder => self.n_dec_layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Encoder,
    Decoder,
}

impl Side {
    pub fn adapter_tag(self) -> ParameterGroupTag {
        match self {
            Side::Encoder => ParameterGroupTag::EncoderAdapter,
            Side::Decoder => ParameterGroupTag::DecoderAdapter,
        }
    }

    pub(crate) fn prefix(self) -> &'static str {
        match self {
            Side::Encoder => "encoder",
            Side::Decoder => "decoder",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" | "enc" => Ok(Side::Encoder),
            "decoder" | "dec" => Ok(Side::Decoder),
            other => Err(Error::Config(format!("unknown side `{other}`"))),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// Disjoint parameter groups used for selective freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParameterGroupTag {
    Encoder,
    Decoder,
    CrossAttention,
    EncoderAdapter,
    DecoderAdapter,
    Embeddings,
}

impl ParameterGroupTag {
    pub const ALL: [ParameterGroupTag; 6] = [
        ParameterGroupTag::Encoder,
        ParameterGroupTag::Decoder,
        ParameterGroupTag::CrossAttention,
        ParameterGroupTag::EncoderAdapter,
        ParameterGroupTag::DecoderAdapter,
        ParameterGroupTag::Embeddings,
    ];

    /// Group of a fully qualified parameter name.
    pub fn of(name: &str) -> Result<Self> {
        let tag = if name.starts_with("encoder.adapter.") {
            ParameterGroupTag::EncoderAdapter
        } else if name.starts_with("decoder.adapter.") {
            ParameterGroupTag::DecoderAdapter
        } else if name.starts_with("embeddings.") {
            ParameterGroupTag::Embeddings
        } else if name.starts_with("decoder.") {
            if name.contains(".cross_attn.") {
                ParameterGroupTag::CrossAttention
            } else {
                ParameterGroupTag::Decoder
            }
        } else if name.starts_with("encoder.") {
            ParameterGroupTag::Encoder
        } else {
            return Err(Error::Contract(format!("parameter `{name}` has no group")));
        };
        Ok(tag)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParameterGroupTag::Encoder => "encoder",
            ParameterGroupTag::Decoder => "decoder",
            ParameterGroupTag::CrossAttention => "cross_attention",
            ParameterGroupTag::EncoderAdapter => "encoder_adapter",
            ParameterGroupTag::DecoderAdapter => "decoder_adapter",
            ParameterGroupTag::Embeddings => "embeddings",
        }
    }
}

impl FromStr for ParameterGroupTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParameterGroupTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown parameter group `{s}`")))
    }
}

impl fmt::Display for ParameterGroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Set of trainable groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const NONE: GroupSet = GroupSet(0);

    pub fn all() -> Self {
        ParameterGroupTag::ALL.into_iter().collect()
    }

    pub fn only(tag: ParameterGroupTag) -> Self {
        GroupSet(tag.bit())
    }

    pub fn contains(self, tag: ParameterGroupTag) -> bool {
        self.0 & tag.bit() != 0
    }

    pub fn with(self, tag: ParameterGroupTag) -> Self {
        GroupSet(self.0 | tag.bit())
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl FromIterator<ParameterGroupTag> for GroupSet {
    fn from_iter<I: IntoIterator<Item = ParameterGroupTag>>(iter: I) -> Self {
        iter.into_iter().fold(GroupSet::NONE, GroupSet::with)
    }
}
