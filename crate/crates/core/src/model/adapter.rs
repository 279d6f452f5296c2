use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Side};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{NamedTensorStore, Tensor};

const ADAPTER_INIT_STD: f64 = 0.02;

/// Shape of a bottleneck adapter stack for one side of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub bottleneck: usize,
}

impl AdapterConfig {
    pub fn for_side(config: &ModelConfig, side: Side) -> Self {
        Self {
            n_layers: config.n_layers(side),
            d_model: config.d_model,
            bottleneck: config.adapter_bottleneck,
        }
    }

    /// 64-bit lineage digest of `(seed, architecture)`.
    pub fn fingerprint(&self, seed: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(b"soupmt/adapter-init/v1");
        h.update(seed.to_le_bytes());
        for v in [self.n_layers, self.d_model, self.bottleneck] {
            h.update((v as u64).to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Per-layer `norm -> down -> relu -> up -> residual` adapter weights.
///
/// Tensor names are relative: `layers.{i}.{norm.gain, norm.bias,
/// down.weight, down.bias, up.weight, up.bias}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeights<T> {
    config: AdapterConfig,
    store: NamedTensorStore<T>,
    fingerprint: u64,
}

fn layer_shapes(cfg: &AdapterConfig) -> [(&'static str, Vec<usize>); 6] {
    let (d, b) = (cfg.d_model, cfg.bottleneck);
    [
        ("down.bias", vec![b]),
        ("down.weight", vec![d, b]),
        ("norm.bias", vec![d]),
        ("norm.gain", vec![d]),
        ("up.bias", vec![d]),
        ("up.weight", vec![b, d]),
    ]
}

impl<T: Scalar> AdapterWeights<T> {
    /// Fresh, never-trained adapter. Identical `(config, seed)` pairs give
    /// bitwise-identical weights and the same fingerprint.
    pub fn untrained(config: AdapterConfig, seed: u64) -> Result<Self> {
        if config.n_layers == 0 || config.bottleneck == 0 || config.bottleneck >= config.d_model {
            return Err(Error::Config(format!("invalid adapter shape {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, ADAPTER_INIT_STD).expect("positive std");
        let mut store = NamedTensorStore::new();
        for layer in 0..config.n_layers {
            for (suffix, shape) in layer_shapes(&config) {
                let n: usize = shape.iter().product();
                let values: Vec<f64> = match suffix {
                    "norm.gain" => vec![1.0; n],
                    "down.weight" | "up.weight" => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    _ => vec![0.0; n],
                };
                store.insert(format!("layers.{layer}.{suffix}"), Tensor::from_f64(shape, &values)?);
            }
        }
        Ok(Self {
            config,
            store,
            fingerprint: config.fingerprint(seed),
        })
    }

    /// Rebuilds an adapter from a raw store, inferring and checking its shape.
    pub fn from_store(store: NamedTensorStore<T>, fingerprint: u64) -> Result<Self> {
        let d_w = store
            .get("layers.0.down.weight")
            .ok_or_else(|| Error::Shape("adapter store lacks layers.0.down.weight".into()))?;
        let (d_model, bottleneck) = match d_w.shape() {
            [d, b] => (*d, *b),
            s => return Err(Error::Shape(format!("down.weight must be 2-D, got {s:?}"))),
        };
        let n_layers = store.len() / 6;
        let config = AdapterConfig {
            n_layers,
            d_model,
            bottleneck,
        };
        if n_layers * 6 != store.len() {
            return Err(Error::Shape(format!(
                "adapter store holds {} tensors, not a multiple of 6",
                store.len()
            )));
        }
        for layer in 0..n_layers {
            for (suffix, shape) in layer_shapes(&config) {
                let name = format!("layers.{layer}.{suffix}");
                match store.get(&name) {
                    Some(t) if t.shape() == shape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::Shape(format!(
                            "adapter tensor `{name}` has shape {:?}, expected {shape:?}",
                            t.shape()
                        )))
                    }
                    None => return Err(Error::Shape(format!("adapter store lacks `{name}`"))),
                }
            }
        }
        Ok(Self {
            config,
            store,
            fingerprint,
        })
    }

    pub fn config(&self) -> AdapterConfig {
        self.config
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn store(&self) -> &NamedTensorStore<T> {
        &self.store
    }

    /// Mutable tensor access. Names and shapes are fixed; only values change.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.store.get_mut(name)
    }

    pub fn into_store(self) -> NamedTensorStore<T> {
        self.store
    }

    /// Applies `f` to every value of every tensor.
    pub fn map_values(&mut self, mut f: impl FnMut(&str, &mut T)) {
        for (name, t) in self.store.iter_mut() {
            for v in t.values_mut() {
                f(name, v);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> AdapterWeights<U> {
        AdapterWeights {
            config: self.config,
            store: self.store.cast(),
            fingerprint: self.fingerprint,
        }
    }
}

/// Randomly initialized control adapter sized for `side` of `config`.
pub fn make_untrained_adapter<T: Scalar>(config: &ModelConfig, side: Side, seed: u64) -> Result<AdapterWeights<T>> {
    config.validate()?;
    AdapterWeights::untrained(AdapterConfig::for_side(config, side), seed)
}
