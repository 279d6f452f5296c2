use std::path::PathBuf;

use clap::Args;
use soupmt::corpus::{
    filter_corpus_parallel, read_lines, records_from_documents, LanguageIdentifier, StopwordSet, TrigramClassifier,
};
use soupmt::synth::{monolingual_documents, parallel_pairs, toy_family};
use soupmt::{Error, Result};

use crate::util::{load_config, pick, show, write_file, write_meta};
use crate::ConfigArg;

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Documents per language.
    #[arg(long, default_value_t = 500)]
    docs: usize,
    /// Pairs in the lex-iso pretraining bitext.
    #[arg(long, default_value_t = 800)]
    pretrain_pairs: usize,
    /// Pairs in the cr1-eng fine-tuning bitext.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 100)]
    test_pairs: usize,
}

fn tsv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect()
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let fam = toy_family(a.seed);
    let by_code = |c: &str| fam.iter().find(|l| l.code == c).expect("toy family member");
    for (i, lang) in fam.iter().enumerate() {
        let docs = monolingual_documents(lang, a.docs, a.seed * 100 + 7 + i as u64);
        write_file(&a.out.join(format!("raw/{}.txt", lang.code)), docs.join("\n") + "\n")?;
        write_file(
            &a.out.join(format!("stopwords/{}.txt", lang.code)),
            lang.function_words().join("\n") + "\n",
        )?;
    }
    let pre = parallel_pairs(by_code("lex"), by_code("iso"), a.pretrain_pairs, a.seed * 100 + 51);
    write_file(&a.out.join("parallel/lex-iso.tsv"), tsv(&pre))?;
    let train = parallel_pairs(by_code("cr1"), by_code("eng"), a.pairs, a.seed * 100 + 61);
    write_file(&a.out.join("parallel/cr1-eng.train.tsv"), tsv(&train))?;
    let test = parallel_pairs(by_code("cr1"), by_code("eng"), a.test_pairs, a.seed * 100 + 71);
    write_file(&a.out.join("parallel/cr1-eng.test.tsv"), tsv(&test))?;
    let side = |f: fn(&(String, String)) -> &String| test.iter().map(|p| format!("{}\n", f(p))).collect::<String>();
    write_file(&a.out.join("test/cr1-eng.cr1"), side(|p| &p.0))?;
    write_file(&a.out.join("test/cr1-eng.eng"), side(|p| &p.1))?;
    write_meta(
        &a.out.join("synth"),
        "synth",
        &[
            ("seed", a.seed.to_string()),
            ("docs", a.docs.to_string()),
            ("pairs", a.pairs.to_string()),
        ],
    )?;
    eprintln!(
        "wrote toy family {:?} to {}",
        fam.iter().map(|l| &l.code).collect::<Vec<_>>(),
        show(&a.out)
    );
    Ok(())
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Raw text, one document per line.
    #[arg(long)]
    input: PathBuf,
    /// Kept sentences, one per line.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    lang: String,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Directory of `{code}.txt` language-ID seed files.
    #[arg(long)]
    langid_dir: Option<PathBuf>,
    /// Per-rule breach counts (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let source = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    let records = records_from_documents(&text, &a.lang, source);
    let stop_path = a.stopwords.or(cfg.paths.stopwords);
    let stopwords = match &stop_path {
        Some(p) => StopwordSet::load(p)?,
        None => StopwordSet::default(),
    };
    let langid_dir = a.langid_dir.or(cfg.paths.langid_dir);
    let classifier = langid_dir.as_deref().map(TrigramClassifier::from_dir).transpose()?;
    let (kept, report) = filter_corpus_parallel(
        &records,
        &stopwords,
        classifier.as_ref().map(|c| c as &dyn LanguageIdentifier),
    );
    let body: String = kept.iter().map(|r| format!("{}\n", r.text)).collect();
    write_file(&a.output, body)?;
    if let Some(r) = &a.report {
        write_file(r, report.to_csv())?;
    }
    write_meta(
        &a.output,
        "preprocess",
        &[
            ("input", show(&a.input)),
            ("lang", a.lang.clone()),
            ("stopwords", stop_path.as_deref().map(show).unwrap_or_default()),
            ("langid_dir", langid_dir.as_deref().map(show).unwrap_or_default()),
        ],
    )?;
    eprint!("{}", report.to_text());
    Ok(())
}

#[derive(Args)]
pub struct TrainBpeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Training text files, one sentence per line.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    vocab_size: usize,
    /// Language codes that get a tag token, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    langs: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn train_bpe(a: TrainBpeArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let out = pick(&a.out, &cfg.paths.vocab, "--out or paths.vocab")?;
    let mut lines = Vec::new();
    for p in &a.corpus {
        lines.extend(read_lines(p)?);
    }
    let langs: Vec<&str> = a.langs.iter().map(String::as_str).collect();
    let vocab = soupmt::tokenizer::train_bpe(&lines, a.vocab_size, &langs)?;
    crate::util::ensure_parent(&out)?;
    vocab.save(&out)?;
    write_meta(
        &out,
        "train-bpe",
        &[
            ("corpus", a.corpus.iter().map(|p| show(p)).collect::<Vec<_>>().join(",")),
            ("vocab_size", a.vocab_size.to_string()),
            ("langs", a.langs.join(",")),
        ],
    )?;
    eprintln!("vocabulary of {} tokens written to {}", vocab.len(), show(&out));
    Ok(())
}
