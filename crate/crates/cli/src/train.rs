use std::path::PathBuf;

use clap::Args;
use soupmt::checkpoint::{load_adapter, save_adapter, save_model, save_store};
use soupmt::corpus::{read_lines, read_parallel};
use soupmt::model::{make_untrained_adapter, Side};
use soupmt::pipeline::{denoising_data, parallel_data};
use soupmt::training::{self, TrainConfig, TrainOutcome};
use soupmt::{Adapter32, Error, Model32, Result};

use crate::util::{ensure_parent, lang, load_base, load_config, load_vocab, model_config, pick, show, write_meta};
use crate::ConfigArg;

/// Overrides for a `[pretrain]`, `[adapter]` or `[caft]` table.
#[derive(Args, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    max_lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed for shuffling, dropout, and noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

impl TrainFlags {
    fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut t = base.clone();
        if let Some(v) = self.max_steps {
            t.max_steps = v;
        }
        if let Some(v) = self.max_lr {
            t.max_lr = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
            t.noise.seed = v;
        }
        t.validate()?;
        Ok(t)
    }

    fn finish(&self, outcome: &TrainOutcome) -> Result<()> {
        if let Some(p) = &self.log {
            ensure_parent(p)?;
            outcome.log.save(p)?;
        }
        let dev = outcome.log.dev_losses();
        eprintln!(
            "{} steps; dev loss {:.4} at step 0, best {:.4} at step {}{}",
            outcome.steps,
            dev.first().map_or(f64::NAN, |d| d.1),
            outcome.best_dev_loss,
            outcome.best_step,
            if outcome.stopped_early { " (stopped early)" } else { "" }
        );
        Ok(())
    }
}

fn pair_key(key: &str) -> Result<(&str, &str)> {
    key.split_once('-')
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| Error::Config(format!("parallel corpus key `{key}` is not `src-tgt`")))
}

#[derive(Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base-model initialization seed.
    #[arg(long)]
    init_seed: Option<u64>,
    #[command(flatten)]
    train: TrainFlags,
}

/// Every `[corpora.pretrain_mono]` entry is a denoising task and every
/// `[corpora.pretrain_parallel]` entry is used in both directions.
pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let vocab = load_vocab(&a.vocab, &cfg)?;
    let out = pick(&a.out, &cfg.paths.base_model, "--out or paths.base_model")?;
    let tc = a.train.apply(&cfg.pretrain)?;
    let seed = a.init_seed.unwrap_or(cfg.experiment.seed);
    let mut mono = Vec::new();
    for (l, p) in &cfg.corpora.pretrain_mono {
        mono.push(denoising_data(&vocab, &read_lines(p)?, l)?);
    }
    let mut par = Vec::new();
    for (key, p) in &cfg.corpora.pretrain_parallel {
        let (s, t) = pair_key(key)?;
        let pairs = read_parallel(p)?;
        par.push(parallel_data(&vocab, &pairs, s, t)?);
        let flipped: Vec<(String, String)> = pairs.into_iter().map(|(x, y)| (y, x)).collect();
        par.push(parallel_data(&vocab, &flipped, t, s)?);
    }
    let mut model = Model32::build(model_config(&cfg, &vocab)?, seed)?;
    let outcome = training::pretrain_base(&mut model, &mono, &par, &tc)?;
    ensure_parent(&out)?;
    save_model(&out, &model)?;
    write_meta(
        &out,
        "pretrain",
        &[
            ("init_seed", seed.to_string()),
            ("train_seed", tc.seed.to_string()),
            ("steps", outcome.steps.to_string()),
            ("fingerprint", format!("{:016x}", model.fingerprint())),
        ],
    )?;
    a.train.finish(&outcome)
}

#[derive(Args)]
pub struct InitAdapterArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    side: Side,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `experiment.adapter_seed`.
    #[arg(long)]
    init_seed: Option<u64>,
}

/// Adapter shapes do not depend on the vocabulary, so none is needed.
pub fn init_adapter(a: InitAdapterArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let seed = a.init_seed.unwrap_or(cfg.experiment.adapter_seed);
    let adapter: Adapter32 = make_untrained_adapter(&cfg.model, a.side, seed)?;
    ensure_parent(&a.out)?;
    save_adapter(&a.out, &adapter)?;
    write_meta(
        &a.out,
        "init-adapter",
        &[
            ("side", a.side.to_string()),
            ("init_seed", seed.to_string()),
            ("fingerprint", format!("{:016x}", adapter.fingerprint())),
        ],
    )
}

#[derive(Args)]
pub struct TrainAdapterArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    side: Side,
    #[arg(long)]
    lang: String,
    /// Monolingual sentences; defaults to `corpora.adapter.<lang>`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Start from this adapter file instead of a fresh initialization.
    #[arg(long, conflicts_with = "init_seed")]
    init: Option<PathBuf>,
    /// Defaults to `experiment.adapter_seed`.
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

pub fn train_adapter(a: TrainAdapterArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let vocab = load_vocab(&a.vocab, &cfg)?;
    let mut model = load_base(&a.model, &cfg, &vocab)?;
    let corpus = pick(
        &a.corpus,
        &cfg.corpora.adapter.get(&a.lang).cloned(),
        &format!("--corpus or corpora.adapter.{}", a.lang),
    )?;
    let tc = a.train.apply(&cfg.adapter)?;
    let seed = a.init_seed.unwrap_or(cfg.experiment.adapter_seed);
    let init: Adapter32 = match &a.init {
        Some(p) => load_adapter(p)?,
        None => make_untrained_adapter(model.config(), a.side, seed)?,
    };
    let data = denoising_data(&vocab, &read_lines(&corpus)?, &a.lang)?;
    let (adapter, outcome) = training::train_denoising_adapter(&mut model, init, a.side, &data, &tc)?;
    ensure_parent(&a.out)?;
    save_adapter(&a.out, &adapter)?;
    let init_field = match &a.init {
        Some(p) => ("init", show(p)),
        None => ("init_seed", seed.to_string()),
    };
    write_meta(
        &a.out,
        "train-adapter",
        &[
            ("side", a.side.to_string()),
            ("lang", a.lang.clone()),
            ("corpus", show(&corpus)),
            init_field,
            ("train_seed", tc.seed.to_string()),
            ("steps", outcome.steps.to_string()),
            ("fingerprint", format!("{:016x}", adapter.fingerprint())),
        ],
    )?;
    a.train.finish(&outcome)
}

#[derive(Args)]
pub struct CaftArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    enc_adapter: Option<PathBuf>,
    #[arg(long)]
    dec_adapter: Option<PathBuf>,
    /// `source<TAB>target` pairs; defaults to `corpora.caft`.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Cross-attention weights; defaults to `paths.cross_attn`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    src: Option<String>,
    #[arg(long)]
    tgt: Option<String>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

pub fn caft(a: CaftArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let vocab = load_vocab(&a.vocab, &cfg)?;
    let mut model = load_base(&a.model, &cfg, &vocab)?;
    let enc_path = pick(
        &a.enc_adapter,
        &cfg.paths.enc_adapter,
        "--enc-adapter or paths.enc_adapter",
    )?;
    let dec_path = pick(
        &a.dec_adapter,
        &cfg.paths.dec_adapter,
        "--dec-adapter or paths.dec_adapter",
    )?;
    let data_path = pick(&a.train_data, &cfg.corpora.caft, "--train-data or corpora.caft")?;
    let out = pick(&a.out, &cfg.paths.cross_attn, "--out or paths.cross_attn")?;
    let src = lang(&a.src, &cfg.experiment.source, "--src or experiment.source")?;
    let tgt = lang(&a.tgt, &cfg.experiment.target, "--tgt or experiment.target")?;
    let tc = a.train.apply(&cfg.caft)?;
    let enc: Adapter32 = load_adapter(&enc_path)?;
    let dec: Adapter32 = load_adapter(&dec_path)?;
    let data = parallel_data(&vocab, &read_parallel(&data_path)?, &src, &tgt)?;
    let (store, outcome) = training::caft(&mut model, enc, dec, &data, &tc)?;
    ensure_parent(&out)?;
    save_store(&out, &store, model.fingerprint())?;
    write_meta(
        &out,
        "caft",
        &[
            ("enc_adapter", show(&enc_path)),
            ("dec_adapter", show(&dec_path)),
            ("train_data", show(&data_path)),
            ("src", src),
            ("tgt", tgt),
            ("train_seed", tc.seed.to_string()),
            ("steps", outcome.steps.to_string()),
        ],
    )?;
    a.train.finish(&outcome)
}
