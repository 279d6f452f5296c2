//! Experiment manifests: TOML with one table per concern.
//!
//! ```toml
//! [experiment]
//! source = "cr1"
//! target = "eng"
//! seed = 1
//! adapter_seed = 7
//!
//! [paths]
//! vocab = "work/vocab.txt"
//!
//! [model]
//! d_model = 64
//!
//! [adapter]
//! max_steps = 300
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Source language `s`.
    pub source: String,
    /// Target language `t`.
    pub target: String,
    /// Base-model initialization seed.
    pub seed: u64,
    /// Initialization seed shared by every adapter meant to be souped.
    pub adapter_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub vocab: Option<PathBuf>,
    pub base_model: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub langid_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub enc_adapter: Option<PathBuf>,
    pub dec_adapter: Option<PathBuf>,
    pub cross_attn: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorporaSection {
    /// Language code to one-sentence-per-line file.
    pub pretrain_mono: BTreeMap<String, PathBuf>,
    /// `"src-tgt"` to a tab-separated file.
    pub pretrain_parallel: BTreeMap<String, PathBuf>,
    /// Language code to the monolingual corpus used for its adapter.
    pub adapter: BTreeMap<String, PathBuf>,
    /// `source<TAB>target` pairs for cross-attention fine-tuning.
    pub caft: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoupEntry {
    pub path: PathBuf,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoupSection {
    pub encoder: Vec<SoupEntry>,
    pub decoder: Vec<SoupEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub paths: PathsSection,
    pub corpora: CorporaSection,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub adapter: TrainConfig,
    pub caft: TrainConfig,
    pub soup: SoupSection,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a manifest and resolves its relative paths against its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.vocab,
            &mut p.base_model,
            &mut p.stopwords,
            &mut p.langid_dir,
            &mut p.features,
            &mut p.embeddings,
            &mut p.groups,
            &mut p.enc_adapter,
            &mut p.dec_adapter,
            &mut p.cross_attn,
        ] {
            rebase_opt(base, slot);
        }
        let c = &mut self.corpora;
        for m in [&mut c.pretrain_mono, &mut c.pretrain_parallel, &mut c.adapter] {
            m.values_mut().for_each(|p| rebase(base, p));
        }
        rebase_opt(base, &mut c.caft);
        rebase_opt(base, &mut c.test);
        for e in self.soup.encoder.iter_mut().chain(&mut self.soup.decoder) {
            rebase(base, &mut e.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if !e.source.is_empty() && e.source == e.target {
            return Err(Error::Config(format!("source and target are both {:?}", e.source)));
        }
        self.model.validate()?;
        for (name, t) in [
            ("pretrain", &self.pretrain),
            ("adapter", &self.adapter),
            ("caft", &self.caft),
        ] {
            t.validate().map_err(|err| Error::Config(format!("[{name}] {err}")))?;
        }
        Ok(())
    }
}

/// Unwraps an optional setting or reports it missing.
pub fn required<T: Clone>(value: &Option<T>, what: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::Config(format!("missing {what}")))
}
