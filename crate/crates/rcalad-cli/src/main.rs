//! Command-line front end for the rcalad experiment runner.
//!
//! Six commands cover the workflow: `train` fits models and guarantees
//! checkpoints, `score` evaluates a saved checkpoint, `eval` runs a whole
//! experiment into a report, `ablate` sweeps every model variant, `stats`
//! compares two reports with a signed-rank test, and `toy` materializes a
//! synthetic dataset as CSV. Every command prints a single JSON line on
//! success; failures print a single JSON error line to stderr and exit
//! nonzero. `RCALAD_THREADS` caps how many runs execute concurrently.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rcalad::data::synth_toy;
use rcalad::error::io_err;
use rcalad::exp::{
    load_checkpoint, run_experiment, stage_data, DatasetKind, ExperimentConfig, Report,
    RunOptions,
};
use rcalad::score::ScoreKind;
use rcalad::stats::wilcoxon_signed_rank;
use rcalad::train::Variant;
use rcalad::{Error, RngStream};

#[derive(Parser)]
#[command(
    name = "rcalad",
    about = "Adversarial anomaly detection experiments: train, score, evaluate, ablate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the experiment commands. A missing `--config` falls back
/// to the built-in toy ring experiment, so every command is runnable out of
/// the box.
#[derive(Args)]
struct Common {
    /// Experiment config file (TOML with [dataset], [train], [score], [split], [run]).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override how many runs to execute.
    #[arg(long, value_name = "N")]
    runs: Option<usize>,
    /// Directory for reports, score dumps, loss histories, and checkpoints.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint file: written by train, read by score.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Anomaly score column to evaluate.
    #[arg(long, value_name = "KIND", value_parser = ["l1", "l2", "logits", "features", "fm", "all"])]
    score: Option<String>,
    /// Model variant preset; toggles the extra discriminators and the
    /// supplementary distribution.
    #[arg(long, value_name = "NAME", value_parser = ["ali", "alice", "alad", "calad", "ralad", "rcalad"])]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit models and write checkpoints (plus the usual report artifacts).
    Train(Common),
    /// Score the test split with a previously saved checkpoint.
    Score(Common),
    /// Run the configured experiment end to end and emit a report.
    Eval(Common),
    /// Run every variant preset on the same config and summarize.
    Ablate(Common),
    /// Compare per-run F1 of two reports with a Wilcoxon signed-rank test.
    Stats {
        /// Baseline report.json.
        baseline: PathBuf,
        /// Candidate report.json to compare against the baseline.
        candidate: PathBuf,
    },
    /// Generate a toy dataset and write train/test CSVs.
    Toy(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::for_dataset(DatasetKind::GaussianRing),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(runs) = common.runs {
        cfg.run.runs = runs;
    }
    if let Some(kind) = &common.score {
        ScoreKind::parse(kind)?;
        cfg.score.kind = kind.clone();
    }
    if let Some(name) = &common.variant {
        cfg.train.set_variant(Variant::parse(name)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn copy_checkpoint(src: &Path, dst: &Path) -> Result<(), Error> {
    if let Some(parent) = dst.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    std::fs::copy(src, dst).map_err(|e| io_err(src, e))?;
    std::fs::copy(sidecar(src), sidecar(dst)).map_err(|e| io_err(&sidecar(src), e))?;
    Ok(())
}

fn report_summary(report: &Report, report_path: Option<&Path>) -> serde_json::Value {
    json!({
        "report": report_path.map(|p| p.display().to_string()),
        "dataset": report.dataset,
        "variant": report.variant,
        "score": report.score,
        "n_runs": report.n_runs,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "auroc": report.auroc,
    })
}

fn cmd_train(common: &Common) -> Result<serde_json::Value, Error> {
    let cfg = load(common)?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::Config("train needs --out for its artifacts".into()))?;
    let opts = RunOptions {
        out_dir: Some(out.clone()),
        final_checkpoint: true,
        ..Default::default()
    };
    let report = run_experiment(&cfg, &opts)?;
    if let Some(dst) = &common.checkpoint {
        copy_checkpoint(&out.join("run0").join("checkpoint.rcal"), dst)?;
    }
    let mut summary = report_summary(&report, Some(&out.join("report.json")));
    summary["checkpoints"] = json!(report
        .runs
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| out.join(format!("run{}", r.run)).join("checkpoint.rcal").display().to_string())
        .collect::<Vec<_>>());
    Ok(summary)
}

fn cmd_score(common: &Common) -> Result<serde_json::Value, Error> {
    let cfg = load(common)?;
    let path = common
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("score needs --checkpoint to load".into()))?;
    let source = stage_data(&cfg)?;
    let data = rcalad::exp::prepare_run(&cfg, 0, &source).map_err(|f| f.error)?;
    let mut trainer = rcalad::exp::build_trainer(&cfg, 0, data.facts.feature_width)?;
    load_checkpoint(&path, &mut trainer, &cfg.config_hash())?;
    let art = rcalad::exp::score_run(&cfg, &trainer, &data.test, data.facts)
        .map_err(|f| f.error)?;
    let mut dump = None;
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let dump_path = out.join("scores.csv");
        let mut buf = Vec::new();
        rcalad::score::write_score_columns_csv(&mut buf, art.labels.len(), &art.columns, Some(&art.labels))
            .map_err(|e| io_err(&dump_path, e))?;
        std::fs::write(&dump_path, buf).map_err(|e| io_err(&dump_path, e))?;
        dump = Some(dump_path.display().to_string());
    }
    Ok(json!({
        "checkpoint": path.display().to_string(),
        "step": trainer.step,
        "n_test": art.facts.n_test,
        "flagged": art.flagged,
        "precision": art.metrics.precision,
        "recall": art.metrics.recall,
        "f1": art.metrics.f1,
        "auroc": art.metrics.auroc,
        "scores": dump,
    }))
}

fn cmd_eval(common: &Common) -> Result<serde_json::Value, Error> {
    let cfg = load(common)?;
    let opts = RunOptions { out_dir: common.out.clone(), ..Default::default() };
    let report = run_experiment(&cfg, &opts)?;
    let path = common.out.as_ref().map(|d| d.join("report.json"));
    Ok(report_summary(&report, path.as_deref()))
}

fn cmd_ablate(common: &Common) -> Result<serde_json::Value, Error> {
    let cfg = load(common)?;
    let mut rows = Vec::new();
    let mut f1s: Vec<(&'static str, Vec<f64>)> = Vec::new();
    for variant in Variant::all() {
        let mut vcfg = cfg.clone();
        vcfg.train.set_variant(variant);
        let out_dir = common.out.as_ref().map(|d| d.join(variant.name()));
        let opts = RunOptions { out_dir, ..Default::default() };
        let report = run_experiment(&vcfg, &opts)?;
        rows.push(json!({
            "variant": variant.name(),
            "score": report.score,
            "n_runs": report.n_runs,
            "f1": report.f1,
            "f1_std": report.std.f1,
            "auroc": report.auroc,
        }));
        f1s.push((variant.name(), report.run_f1s()));
    }
    let series = |name: &str| f1s.iter().find(|(n, _)| *n == name).map(|(_, v)| v);
    let comparison = match (series("rcalad"), series("alad")) {
        (Some(a), Some(b)) if !a.is_empty() && a.len() == b.len() => {
            wilcoxon_signed_rank(a, b).ok().map(|w| {
                json!({"n": w.n, "statistic": w.statistic, "p_value": w.p_value})
            })
        }
        _ => None,
    };
    let summary = json!({ "variants": rows, "rcalad_vs_alad": comparison });
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("ablation.json");
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    Ok(summary)
}

fn cmd_stats(baseline: &Path, candidate: &Path) -> Result<serde_json::Value, Error> {
    let base = Report::load(baseline)?;
    let cand = Report::load(candidate)?;
    let w = wilcoxon_signed_rank(&cand.run_f1s(), &base.run_f1s())?;
    Ok(json!({
        "baseline": baseline.display().to_string(),
        "candidate": candidate.display().to_string(),
        "baseline_f1": base.f1,
        "candidate_f1": cand.f1,
        "n": w.n,
        "statistic": w.statistic,
        "p_value": w.p_value,
    }))
}

fn cmd_toy(common: &Common) -> Result<serde_json::Value, Error> {
    let cfg = load(common)?;
    if !cfg.dataset.kind.is_toy() {
        return Err(Error::Config(format!(
            "toy needs a toy dataset kind, got \"{}\"",
            cfg.dataset.kind.name()
        )));
    }
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::Config("toy needs --out for the CSV files".into()))?;
    let (train_spec, test_spec) = cfg.dataset.toy_specs();
    let mut rng = RngStream::from_seed(cfg.run.seed).substream("data");
    let train = synth_toy(&train_spec, &mut rng)?;
    let test = synth_toy(&test_spec, &mut rng)?;
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    train.write_csv(&out.join("train.csv"))?;
    test.write_csv(&out.join("test.csv"))?;
    Ok(json!({
        "dataset": cfg.dataset.label(),
        "train": out.join("train.csv").display().to_string(),
        "train_rows": train.n,
        "test": out.join("test.csv").display().to_string(),
        "test_rows": test.n,
    }))
}

fn dispatch(cli: Cli) -> Result<serde_json::Value, Error> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Score(c) => cmd_score(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Stats { baseline, candidate } => cmd_stats(baseline, candidate),
        Command::Toy(c) => cmd_toy(c),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let first = e.to_string().lines().next().unwrap_or("bad usage").to_string();
                eprintln!("{}", json!({"error": "usage", "message": first}));
                std::process::exit(2);
            }
            // Help and version output.
            e.exit();
        }
    };
    match dispatch(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("{}", json!({"error": e.code(), "message": e.to_string()}));
            std::process::exit(1);
        }
    }
}
