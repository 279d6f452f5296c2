use std::path::PathBuf;

use clap::{Args, Subcommand};
use soupmt::analysis::{compare_runs, export_boxplot_data, parameter_variance};
use soupmt::checkpoint::load_adapter;
use soupmt::training::TrainLog;
use soupmt::{Adapter32, Error, Result};

use crate::util::write_file;

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    /// Per-tensor and pooled parameter variance of adapters.
    Variance(VarianceArgs),
    /// Step-aligned differences between two training logs.
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct VarianceArgs {
    /// `label=path`; repeat the flag.
    #[arg(long = "adapter", required = true)]
    adapters: Vec<String>,
    /// Box-plot data as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Baseline run log.
    #[arg(long)]
    a: PathBuf,
    /// Treatment run log; deltas are `b - a`.
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Variance(a) => variance(a),
        AnalyzeCommand::Compare(a) => compare(a),
    }
}

fn variance(a: VarianceArgs) -> Result<()> {
    let mut loaded: Vec<(String, Adapter32)> = Vec::new();
    for spec in &a.adapters {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--adapter {spec:?} is not label=path")))?;
        loaded.push((label.to_string(), load_adapter(path.as_ref())?));
    }
    println!("adapter,pooled,min,median,max");
    for (label, ad) in &loaded {
        let s = parameter_variance(ad);
        println!("{label},{},{},{},{}", s.pooled, s.min, s.median, s.max);
    }
    if let Some(p) = &a.out {
        let refs: Vec<(&str, &Adapter32)> = loaded.iter().map(|(l, ad)| (l.as_str(), ad)).collect();
        write_file(p, export_boxplot_data(&refs))?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let c = compare_runs(&TrainLog::load(&a.a)?, &TrainLog::load(&a.b)?)?;
    print!("{}", c.summary());
    if let Some(p) = &a.out {
        write_file(p, c.to_csv())?;
    }
    Ok(())
}
