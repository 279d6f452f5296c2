use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn soupmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soupmt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = soupmt(args);
    assert!(
        out.status.success(),
        "soupmt {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

const TINY: &str = r#"
[experiment]
source = "cr1"
target = "eng"
seed = 3
adapter_seed = 4

[paths]
vocab = "work/vocab.txt"
base_model = "work/base.adpt"

[corpora.pretrain_mono]
lex = "work/clean/lex.txt"

[corpora.pretrain_parallel]
lex-iso = "parallel/lex-iso.tsv"

[corpora.adapter]
cr1 = "work/clean/cr1.txt"

[model]
d_model = 16
n_heads = 2
d_ff = 32
max_seq_len = 32
adapter_bottleneck = 4

[pretrain]
max_steps = 8
grad_accum = 1
warmup_steps = 2
max_lr = 3e-3
eval_interval = 4

[adapter]
max_steps = 6
grad_accum = 1
warmup_steps = 2
max_lr = 1e-2
eval_interval = 3

[caft]
max_steps = 6
grad_accum = 1
warmup_steps = 2
max_lr = 1e-2
eval_interval = 3
"#;

/// A small run from synthetic data to translations; returns the files
/// every rerun must reproduce.
fn tiny_pipeline(dir: &Path) -> Vec<PathBuf> {
    ok(&[
        "synth",
        "--out",
        &s(dir),
        "--docs",
        "30",
        "--pretrain-pairs",
        "40",
        "--pairs",
        "40",
        "--test-pairs",
        "5",
    ]);
    let cfg = dir.join("experiment.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = s(&cfg);
    let w = dir.join("work");
    for l in ["cr1", "lex", "iso", "eng"] {
        ok(&[
            "preprocess",
            "--config",
            &cfg,
            "--lang",
            l,
            "--input",
            &s(&dir.join(format!("raw/{l}.txt"))),
            "--output",
            &s(&w.join(format!("clean/{l}.txt"))),
            "--stopwords",
            &s(&dir.join(format!("stopwords/{l}.txt"))),
            "--report",
            &s(&w.join(format!("clean/{l}.report.csv"))),
        ]);
    }
    let corpora: Vec<String> = ["cr1", "lex", "iso", "eng"]
        .iter()
        .map(|l| s(&w.join(format!("clean/{l}.txt"))))
        .collect();
    let mut bpe = vec![
        "train-bpe",
        "--config",
        &cfg,
        "--vocab-size",
        "120",
        "--langs",
        "cr1,lex,iso,eng",
        "--corpus",
    ];
    bpe.extend(corpora.iter().map(String::as_str));
    ok(&bpe);
    ok(&["pretrain", "--config", &cfg, "--log", &s(&w.join("pretrain.csv"))]);
    ok(&[
        "train-adapter",
        "--config",
        &cfg,
        "--side",
        "encoder",
        "--lang",
        "cr1",
        "--out",
        &s(&w.join("cr1.enc.adpt")),
    ]);
    ok(&[
        "train-adapter",
        "--config",
        &cfg,
        "--side",
        "decoder",
        "--lang",
        "eng",
        "--corpus",
        &s(&w.join("clean/eng.txt")),
        "--out",
        &s(&w.join("eng.dec.adpt")),
    ]);
    ok(&[
        "init-adapter",
        "--config",
        &cfg,
        "--side",
        "encoder",
        "--out",
        &s(&w.join("init.enc.adpt")),
    ]);
    ok(&[
        "soup",
        "--input",
        &s(&w.join("cr1.enc.adpt")),
        "--input",
        &s(&w.join("init.enc.adpt")),
        "--weight",
        "1",
        "--weight",
        "3",
        "--out",
        &s(&w.join("soup.enc.adpt")),
    ]);
    ok(&[
        "caft",
        "--config",
        &cfg,
        "--enc-adapter",
        &s(&w.join("soup.enc.adpt")),
        "--dec-adapter",
        &s(&w.join("eng.dec.adpt")),
        "--train-data",
        &s(&dir.join("parallel/cr1-eng.train.tsv")),
        "--out",
        &s(&w.join("ca.adpt")),
        "--log",
        &s(&w.join("caft.csv")),
    ]);
    ok(&[
        "translate",
        "--config",
        &cfg,
        "--enc-adapter",
        &s(&w.join("soup.enc.adpt")),
        "--dec-adapter",
        &s(&w.join("eng.dec.adpt")),
        "--cross-attn",
        &s(&w.join("ca.adpt")),
        "--input",
        &s(&dir.join("test/cr1-eng.cr1")),
        "--output",
        &s(&w.join("hyp.eng")),
        "--beam",
        "2",
        "--max-len",
        "12",
    ]);
    [
        "clean/cr1.txt",
        "clean/cr1.report.csv",
        "vocab.txt",
        "base.adpt",
        "pretrain.csv",
        "cr1.enc.adpt",
        "eng.dec.adpt",
        "soup.enc.adpt",
        "ca.adpt",
        "caft.csv",
        "hyp.eng",
    ]
    .iter()
    .map(|f| w.join(f))
    .collect()
}

#[test]
fn pipeline_reruns_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = tiny_pipeline(a.path());
    let fb = tiny_pipeline(b.path());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let hyps = std::fs::read_to_string(fa.last().unwrap()).unwrap();
    assert_eq!(hyps.lines().count(), 5);
    let meta = std::fs::read_to_string(a.path().join("work/cr1.enc.adpt.meta")).unwrap();
    assert!(meta.contains("init_seed = \"4\""), "{meta}");
}

#[test]
fn souping_different_lineages_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("m.toml");
    std::fs::write(&cfg, "[model]\nd_model = 16\nn_heads = 2\nadapter_bottleneck = 4\n").unwrap();
    for seed in ["1", "2"] {
        ok(&[
            "init-adapter",
            "--config",
            &s(&cfg),
            "--side",
            "decoder",
            "--init-seed",
            seed,
            "--out",
            &s(&d.path().join(format!("{seed}.adpt"))),
        ]);
    }
    let out = soupmt(&[
        "soup",
        "--input",
        &s(&d.path().join("1.adpt")),
        "--input",
        &s(&d.path().join("2.adpt")),
        "--out",
        &s(&d.path().join("x.adpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lineage"));
    assert!(!d.path().join("x.adpt").exists());
}

#[test]
fn exit_codes_by_error_class() {
    assert_eq!(soupmt(&["--help"]).status.code(), Some(0));
    assert_eq!(soupmt(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(soupmt(&["caft"]).status.code(), Some(1));
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nd_model = 10\nn_heads = 4\n").unwrap();
    assert_eq!(
        soupmt(&["init-adapter", "--config", &s(&bad), "--side", "encoder", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    let missing = d.path().join("nothing.txt");
    assert_eq!(
        soupmt(&["evaluate", "--hyp", &s(&missing), "--ref", &s(&missing)])
            .status
            .code(),
        Some(2)
    );
    let (h, r) = (d.path().join("h"), d.path().join("r"));
    std::fs::write(&h, "a b\n").unwrap();
    std::fs::write(&r, "a b\nc d\n").unwrap();
    assert_eq!(
        soupmt(&["evaluate", "--hyp", &s(&h), "--ref", &s(&r)]).status.code(),
        Some(3)
    );
}

#[test]
fn evaluate_reports_corpus_scores() {
    let d = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo().join("data/fixtures/metric_pairs.tsv")).unwrap();
    let (mut h, mut r) = (String::new(), String::new());
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (a, b) = line.split_once('\t').unwrap();
        h.push_str(a);
        h.push('\n');
        r.push_str(b);
        r.push('\n');
    }
    std::fs::write(d.path().join("h"), h).unwrap();
    std::fs::write(d.path().join("r"), r).unwrap();
    let csv = d.path().join("scores.csv");
    let out = ok(&[
        "evaluate",
        "--hyp",
        &s(&d.path().join("h")),
        "--ref",
        &s(&d.path().join("r")),
        "--csv",
        &s(&csv),
    ]);
    assert!(out.starts_with("BLEU = 33.84"), "{out}");
    assert!(out.contains("chrF = 60.37"), "{out}");
    assert!(csv.exists());
}

#[test]
fn select_from_bundled_groups_and_features() {
    let groups = s(&repo().join("data/language_groups.txt"));
    let out = ok(&[
        "select",
        "--target",
        "hat",
        "--criterion",
        "group",
        "--groups",
        &groups,
        "--group",
        "hat-ie",
        "--k",
        "3",
    ]);
    assert_eq!(out, "rank,code,score\n1,en,0\n2,es,0\n3,fr,0\n");
    let emb = s(&repo().join("data/toy/embeddings.csv"));
    let out = ok(&[
        "select",
        "--target",
        "cr1",
        "--criterion",
        "embedding",
        "--embeddings",
        &emb,
        "--k",
        "2",
    ]);
    let codes: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(codes, ["cr2", "lex"]);
    let feats = s(&repo().join("data/toy/features.csv"));
    let out = soupmt(&[
        "select",
        "--target",
        "cr1",
        "--criterion",
        "typological",
        "--features",
        &feats,
        "--k",
        "9",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("only 4 candidates"));
}

#[test]
fn variance_of_untrained_and_souped_adapters() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("m.toml");
    std::fs::write(&cfg, "[model]\nd_model = 16\nn_heads = 2\nadapter_bottleneck = 4\n").unwrap();
    let init = d.path().join("init.adpt");
    ok(&[
        "init-adapter",
        "--config",
        &s(&cfg),
        "--side",
        "encoder",
        "--out",
        &s(&init),
    ]);
    let csv = d.path().join("box.csv");
    let out = ok(&[
        "analyze",
        "variance",
        "--adapter",
        &format!("init={}", s(&init)),
        "--out",
        &s(&csv),
    ]);
    assert!(out.starts_with("adapter,pooled,min,median,max\ninit,"), "{out}");
    let rows = soupmt::analysis::parse_boxplot_data(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert!(!rows.is_empty() && rows.iter().all(|r| r.0 == "init"));
}
