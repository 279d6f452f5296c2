use std::path::PathBuf;

use clap::Args;
use soupmt::checkpoint::{load_adapter, load_store, save_adapter};
use soupmt::metrics::evaluate as score;
use soupmt::model::{DecodeConfig, Side};
use soupmt::pipeline::translate_lines;
use soupmt::soup::{soup as average, SoupSpec};
use soupmt::tokenizer::EOS;
use soupmt::{Adapter32, Error, Result};

use crate::util::{ensure_parent, lang, load_base, load_config, load_vocab, show, write_file, write_meta};
use crate::ConfigArg;

#[derive(Args)]
pub struct SoupArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Adapter files; repeat the flag. Without it the manifest's
    /// `[soup]` list for `--side` is used.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// One weight per input, in order. Uniform when omitted.
    #[arg(long = "weight")]
    weights: Vec<f64>,
    #[arg(long)]
    side: Option<Side>,
    #[arg(long)]
    out: PathBuf,
}

pub fn soup(a: SoupArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let entries: Vec<(PathBuf, f64)> = if a.inputs.is_empty() {
        if !a.weights.is_empty() {
            return Err(Error::Config("--weight given without --input".into()));
        }
        let list = match a.side {
            Some(Side::Encoder) => &cfg.soup.encoder,
            Some(Side::Decoder) => &cfg.soup.decoder,
            None => {
                return Err(Error::Config(
                    "give --input files or --side with a [soup] manifest".into(),
                ))
            }
        };
        list.iter().map(|e| (e.path.clone(), e.weight)).collect()
    } else if a.weights.is_empty() {
        a.inputs.iter().map(|p| (p.clone(), 1.0)).collect()
    } else if a.weights.len() == a.inputs.len() {
        a.inputs.iter().cloned().zip(a.weights.iter().copied()).collect()
    } else {
        return Err(Error::Config(format!(
            "{} --weight values for {} --input files",
            a.weights.len(),
            a.inputs.len()
        )));
    };
    let adapters: Vec<Adapter32> = entries.iter().map(|(p, _)| load_adapter(p)).collect::<Result<_>>()?;
    let spec = SoupSpec::new(adapters.iter().zip(&entries).map(|(ad, (_, w))| (ad, *w)).collect())?;
    let souped = average(&spec)?;
    ensure_parent(&a.out)?;
    save_adapter(&a.out, &souped)?;
    let listing = entries
        .iter()
        .map(|(p, w)| format!("{}:{w}", show(p)))
        .collect::<Vec<_>>()
        .join(",");
    write_meta(&a.out, "soup", &[("inputs", listing)])?;
    eprintln!("souped {} adapters into {}", entries.len(), show(&a.out));
    Ok(())
}

#[derive(Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    src: Option<String>,
    #[arg(long)]
    tgt: Option<String>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    enc_adapter: Option<PathBuf>,
    #[arg(long)]
    dec_adapter: Option<PathBuf>,
    /// Cross-attention weights written by `caft`.
    #[arg(long)]
    cross_attn: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

pub fn translate(a: TranslateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let vocab = load_vocab(&a.vocab, &cfg)?;
    let mut model = load_base(&a.model, &cfg, &vocab)?;
    let src = lang(&a.src, &cfg.experiment.source, "--src or experiment.source")?;
    let tgt = lang(&a.tgt, &cfg.experiment.target, "--tgt or experiment.target")?;
    let enc_path = a.enc_adapter.or(cfg.paths.enc_adapter);
    let dec_path = a.dec_adapter.or(cfg.paths.dec_adapter);
    let ca_path = a.cross_attn.or(cfg.paths.cross_attn);
    let enc: Option<Adapter32> = enc_path.as_deref().map(load_adapter).transpose()?;
    let dec: Option<Adapter32> = dec_path.as_deref().map(load_adapter).transpose()?;
    model.attach_adapters(enc, dec)?;
    if let Some(p) = &ca_path {
        let (overlay, fp) = load_store(p)?;
        if fp != model.fingerprint() {
            return Err(Error::Lineage {
                expected: model.fingerprint(),
                found: fp,
            });
        }
        model.load_overlay(&overlay)?;
    }
    if a.beam == 0 {
        return Err(Error::Config("--beam must be at least 1".into()));
    }
    let dc = DecodeConfig {
        beam_size: a.beam,
        max_len: a.max_len,
        ..DecodeConfig::new(EOS)
    };
    let lines = lines_keep_empty(&a.input)?;
    let out = translate_lines(&model, &vocab, &lines, &src, &tgt, &dc)?;
    write_file(&a.output, out.iter().map(|l| format!("{l}\n")).collect::<String>())?;
    let opt = |p: &Option<PathBuf>| p.as_deref().map(show).unwrap_or_default();
    write_meta(
        &a.output,
        "translate",
        &[
            ("input", show(&a.input)),
            ("src", src),
            ("tgt", tgt),
            ("enc_adapter", opt(&enc_path)),
            ("dec_adapter", opt(&dec_path)),
            ("cross_attn", opt(&ca_path)),
            ("beam", a.beam.to_string()),
        ],
    )?;
    eprintln!("translated {} segments", out.len());
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// System output, one segment per line.
    #[arg(long)]
    hyp: PathBuf,
    /// References, line-aligned with `--hyp`.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Also write the scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let hyps = lines_keep_empty(&a.hyp)?;
    let refs = lines_keep_empty(&a.reference)?;
    let report = score(&hyps, &refs)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.csv {
        write_file(p, report.to_csv())?;
    }
    Ok(())
}

/// Line-aligned files must keep empty hypotheses in place.
fn lines_keep_empty(path: &std::path::Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).collect())
}
