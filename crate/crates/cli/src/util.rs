use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use soupmt::checkpoint::load_model;
use soupmt::config::{required, ExperimentConfig};
use soupmt::model::ModelConfig;
use soupmt::tokenizer::Vocabulary;
use soupmt::{Error, Model32, Result};

use crate::ConfigArg;

pub fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    let cfg = match &arg.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `flag` if given, else the manifest value, else a configuration error.
pub fn pick(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p.clone()),
        None => required(fallback, what),
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Records seeds and inputs next to an output as `<file>.meta`.
pub fn write_meta(out: &Path, command: &str, fields: &[(&str, String)]) -> Result<()> {
    let mut s = format!("command = {command:?}\n");
    for (k, v) in fields {
        let _ = writeln!(s, "{k} = {v:?}");
    }
    let mut name = out.as_os_str().to_owned();
    name.push(".meta");
    write_file(Path::new(&name), s)
}

pub fn show(p: &Path) -> String {
    p.display().to_string()
}

/// The manifest's model settings with the vocabulary size taken from the
/// vocabulary file.
pub fn model_config(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<ModelConfig> {
    let mc = ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    mc.validate()?;
    Ok(mc)
}

pub fn load_vocab(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<Vocabulary> {
    Vocabulary::load(&pick(flag, &cfg.paths.vocab, "paths.vocab")?)
}

pub fn load_base(flag: &Option<PathBuf>, cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<Model32> {
    let path = pick(flag, &cfg.paths.base_model, "paths.base_model")?;
    load_model(&path, model_config(cfg, vocab)?)
}

/// `flag` overrides the manifest language.
pub fn lang(flag: &Option<String>, fallback: &str, what: &str) -> Result<String> {
    match flag {
        Some(l) => Ok(l.clone()),
        None if !fallback.is_empty() => Ok(fallback.to_string()),
        None => Err(Error::Config(format!("missing {what}"))),
    }
}
