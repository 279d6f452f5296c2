use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use soupmt::selection::{
    load_feature_csv, load_language_groups, select_transfer_languages, Criterion, LanguageProfile, SpreadEvenness,
};
use soupmt::tokenizer::Vocabulary;
use soupmt::{Error, Result};

use crate::util::write_file;

#[derive(Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Typological,
    Embedding,
    Sue,
    Group,
}

#[derive(Args)]
pub struct SelectArgs {
    #[arg(long)]
    target: String,
    #[arg(long, value_enum)]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Restrict the pool; defaults to every language in the data file.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    /// `code,f1,f2,...` with `NA` for missing values.
    #[arg(long)]
    features: Option<PathBuf>,
    /// `code,e1,e2,...`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// `group: code,code,...` lines.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    group: Option<String>,
    /// Tokenizer for the evenness criterion.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Directory holding `{code}.txt` for each candidate.
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    /// Ranking as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("this criterion needs {flag}")))
}

fn profile<'a>(profiles: &'a mut BTreeMap<String, LanguageProfile>, code: &str) -> &'a mut LanguageProfile {
    profiles
        .entry(code.to_string())
        .or_insert_with(|| LanguageProfile::new(code))
}

pub fn select(a: SelectArgs) -> Result<()> {
    let mut profiles: BTreeMap<String, LanguageProfile> = BTreeMap::new();
    profile(&mut profiles, &a.target);
    let vocab;
    let criterion = match a.criterion {
        CriterionArg::Typological => {
            for (code, values) in load_feature_csv(need(&a.features, "--features")?)? {
                profile(&mut profiles, &code).typo_features = values;
            }
            Criterion::Typological
        }
        CriterionArg::Embedding => {
            for (code, values) in load_feature_csv(need(&a.embeddings, "--embeddings")?)? {
                let v = values
                    .into_iter()
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::Data(format!("embedding for {code} has missing values")))?;
                profile(&mut profiles, &code).embedding = Some(v);
            }
            Criterion::Embedding
        }
        CriterionArg::Sue => {
            if a.candidates.is_empty() {
                return Err(Error::Config("the sue criterion needs --candidates".into()));
            }
            let dir = need(&a.corpus_dir, "--corpus-dir")?;
            for code in &a.candidates {
                profile(&mut profiles, code).corpus_ref = Some(dir.join(format!("{code}.txt")));
            }
            vocab = Vocabulary::load(need(&a.vocab, "--vocab")?)?;
            Criterion::Evenness {
                scorer: &SpreadEvenness,
                vocab: &vocab,
            }
        }
        CriterionArg::Group => {
            for (name, codes) in load_language_groups(need(&a.groups, "--groups")?)? {
                for c in codes {
                    profile(&mut profiles, &c).group_tags.insert(name.clone());
                }
            }
            Criterion::Group(need(&a.group, "--group")?)
        }
    };
    let target = profiles[&a.target].clone();
    let pool: Vec<LanguageProfile> = if a.candidates.is_empty() {
        profiles.into_values().collect()
    } else {
        a.candidates
            .iter()
            .map(|c| profiles.get(c).cloned().unwrap_or_else(|| LanguageProfile::new(c)))
            .collect()
    };
    let result = select_transfer_languages(&target, &pool, criterion, a.k)?;
    if result.short {
        eprintln!(
            "warning: only {} candidates available for k = {}",
            result.ranked.len(),
            a.k
        );
    }
    let csv = result.to_csv();
    print!("{csv}");
    if let Some(p) = &a.out {
        write_file(p, csv)?;
    }
    Ok(())
}
