//! Experiment execution: stage the data once, run the train/score/evaluate
//! cycle for each requested run, aggregate into a report.
//!
//! Determinism is the organizing principle. The dataset is generated or
//! loaded from a substream of the experiment seed; each run draws its
//! split, weight initialization, and training streams from its own named
//! substream. Runs execute on worker threads (capped by `RCALAD_THREADS`),
//! but each run is self-contained and results are collected by run index,
//! so the emitted bytes never depend on scheduling. Aggregation is the
//! join point: the report and every dump are written only after all runs
//! finish.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::autodiff::RngStream;
use crate::data::{
    prepare, stratified_split, stratified_subsample, synth_toy, arrhythmia_like, kdd_like,
    Dataset, FittedTransform, Schema, Table,
};
use crate::error::{Error, Result};
use crate::exp::checkpoint::save_checkpoint;
use crate::exp::config::{DatasetKind, ExperimentConfig};
use crate::exp::report::{
    build_report, emit_report, DataFacts, Report, RunArtifacts, RunFailure, RunOutcome,
};
use crate::net::ModelBundle;
use crate::score::{orient_column, score_columns};
use crate::stats::{auroc, prf1, threshold_flags};
use crate::train::Trainer;

/// Inputs to [`run_experiment`] beyond the config itself.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// When set, `report.json`, per-run dumps, and any configured
    /// checkpoints are written under this directory.
    pub out_dir: Option<PathBuf>,
    /// Per-run baseline F1 values to compare against with a signed-rank
    /// test; lengths must match the successful runs here.
    pub baseline_f1: Option<Vec<f64>>,
    /// Save each run's final state as a checkpoint even when the config
    /// sets no cadence. Lives outside the config so it cannot perturb the
    /// config hash a checkpoint is stamped with.
    pub final_checkpoint: bool,
}

/// The staged rows: one pooled labeled table that every run splits its own
/// way, or fixed train and test tables (the toy path, where training rows
/// are all normal by construction).
pub enum DataSource {
    Pooled(Table),
    Fixed { train: Table, test: Table },
}

/// Loads or generates the experiment's rows. Uses the `data` substream of
/// the experiment seed, so the table is identical for every run and every
/// rerun of the same config.
pub fn stage_data(cfg: &ExperimentConfig) -> Result<DataSource> {
    let mut rng = RngStream::from_seed(cfg.run.seed).substream("data");
    let table = match cfg.dataset.kind {
        DatasetKind::Csv => {
            let schema_path = cfg.dataset.schema.as_ref().expect("validated");
            let data_path = cfg.dataset.path.as_ref().expect("validated");
            let schema = Schema::load_json(Path::new(schema_path))?;
            Table::load_csv(Path::new(data_path), &schema)?
        }
        DatasetKind::ArrhythmiaLike => arrhythmia_like(&mut rng),
        DatasetKind::KddLike => kdd_like(&mut rng),
        DatasetKind::GaussianRing | DatasetKind::TwoGaussians => {
            let (train_spec, test_spec) = cfg.dataset.toy_specs();
            let train = synth_toy(&train_spec, &mut rng)?;
            let test = synth_toy(&test_spec, &mut rng)?;
            return Ok(DataSource::Fixed { train, test });
        }
    };
    let labels = table.labels.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "dataset `{}` has no label column; splits and metrics need labels",
            cfg.dataset.label()
        ))
    })?;
    let table = match cfg.dataset.subsample {
        None => table,
        Some(frac) => {
            let keep = stratified_subsample(labels, frac, &mut rng)?;
            table.select(&keep)
        }
    };
    Ok(DataSource::Pooled(table))
}

/// The encoded rows one run trains and evaluates on.
pub struct RunData {
    /// Encoded all-normal training features.
    pub train: crate::autodiff::Tensor,
    pub test: Dataset,
    pub facts: DataFacts,
}

fn fail(stage: &'static str) -> impl Fn(Error) -> RunFailure {
    move |error| RunFailure { stage, error }
}

/// Splits (for pooled sources) and encodes the staged rows exactly as run
/// `run` sees them, without training anything.
pub fn prepare_run(
    cfg: &ExperimentConfig,
    run: usize,
    source: &DataSource,
) -> std::result::Result<RunData, RunFailure> {
    let run_rng = RngStream::from_seed(cfg.run.seed).substream(&format!("run{run}"));
    match source {
        DataSource::Pooled(table) => {
            let labels = table.labels.as_ref().expect("staged pooled tables are labeled");
            let mut split_rng = run_rng.substream("split");
            let split = stratified_split(labels, &cfg.split_spec(), &mut split_rng)
                .map_err(fail("split"))?;
            let prepared = prepare(table, &split, cfg.dataset.scaling).map_err(fail("split"))?;
            let facts = DataFacts {
                feature_width: prepared.transform.width(),
                n_train: prepared.train_normal.n(),
                n_validation: prepared.validation.n(),
                n_test: prepared.test.n(),
            };
            Ok(RunData { train: prepared.train_normal.features, test: prepared.test, facts })
        }
        DataSource::Fixed { train, test } => {
            let transform =
                FittedTransform::fit(train, cfg.dataset.scaling).map_err(fail("split"))?;
            let train_set = transform.apply(train).map_err(fail("split"))?.dataset;
            let test_set = transform.apply(test).map_err(fail("split"))?.dataset;
            let facts = DataFacts {
                feature_width: transform.width(),
                n_train: train_set.n(),
                n_validation: 0,
                n_test: test_set.n(),
            };
            Ok(RunData { train: train_set.features, test: test_set, facts })
        }
    }
}

/// Builds run `run`'s freshly initialized trainer: weights from the run's
/// `model` substream, training streams from its `train` substream.
pub fn build_trainer(cfg: &ExperimentConfig, run: usize, width: usize) -> Result<Trainer> {
    let run_rng = RngStream::from_seed(cfg.run.seed).substream(&format!("run{run}"));
    let arch = cfg.arch_set(width)?;
    let mut model_rng = run_rng.substream("model");
    let bundle = ModelBundle::build(&arch, &mut model_rng)?;
    Trainer::new(bundle, cfg.train.clone(), &run_rng.substream("train"))
}

/// Scores the test rows with a fitted trainer and evaluates at the config's
/// contamination rate: score columns, orient the configured kind (falling
/// back if the variant cannot produce it), threshold, compare to labels.
pub fn score_run(
    cfg: &ExperimentConfig,
    trainer: &Trainer,
    test: &Dataset,
    facts: DataFacts,
) -> RunOutcome {
    let toggles = cfg.train.toggles();
    let columns =
        score_columns(&trainer.bundle, &toggles, &test.features).map_err(fail("score"))?;
    let kind = cfg.score_kind().map_err(fail("score"))?.fallback(&toggles);
    let raw = columns
        .iter()
        .find(|(k, _)| *k == kind)
        .and_then(|(_, col)| col.as_ref())
        .ok_or_else(|| {
            fail("score")(Error::Invalid(format!(
                "fallback score `{}` produced no column",
                kind.name()
            )))
        })?;
    let oriented = orient_column(kind, raw, &cfg.score.orientation);
    let flags = threshold_flags(&oriented, cfg.alpha()).map_err(fail("threshold"))?;
    let labels = test.labels.as_ref().ok_or_else(|| {
        fail("metrics")(Error::Invalid("test rows carry no labels to evaluate against".into()))
    })?;
    let (counts, mut metrics) = prf1(&flags, labels).map_err(fail("metrics"))?;
    metrics.auroc = auroc(&oriented, labels).map_err(fail("metrics"))?;
    let flagged = flags.iter().filter(|f| **f).count();
    Ok(RunArtifacts {
        facts,
        metrics,
        counts,
        flagged,
        columns,
        labels: labels.clone(),
        history: trainer.history.clone(),
    })
}

/// One run, end to end: split and encode, build and fit the model, score
/// the test rows, orient, threshold at the contamination rate, evaluate.
/// Errors come back tagged with the stage that raised them.
///
/// Checkpoints go to `out_dir/run{run}/checkpoint.rcal`: on the configured
/// cadence during fitting, and once more with the final state when
/// `final_checkpoint` is set.
pub fn execute_run(
    cfg: &ExperimentConfig,
    run: usize,
    source: &DataSource,
    out_dir: Option<&Path>,
    final_checkpoint: bool,
) -> RunOutcome {
    let data = prepare_run(cfg, run, source)?;
    let mut trainer = build_trainer(cfg, run, data.facts.feature_width).map_err(fail("fit"))?;
    let cadence = cfg.train.checkpoint_every;
    let checkpoint_path = match (cadence > 0 || final_checkpoint, out_dir) {
        (true, Some(dir)) => {
            let run_dir = dir.join(format!("run{run}"));
            std::fs::create_dir_all(&run_dir)
                .map_err(|e| fail("fit")(crate::error::io_err(&run_dir, e)))?;
            Some(run_dir.join("checkpoint.rcal"))
        }
        _ => None,
    };
    let hash = cfg.config_hash();
    trainer
        .fit(&data.train, |epoch, t| match &checkpoint_path {
            Some(path) if cadence > 0 && (epoch + 1) % cadence == 0 => {
                save_checkpoint(path, t, &hash)
            }
            _ => Ok(()),
        })
        .map_err(fail("fit"))?;
    if final_checkpoint {
        if let Some(path) = &checkpoint_path {
            save_checkpoint(path, &trainer, &hash).map_err(fail("fit"))?;
        }
    }
    score_run(cfg, &trainer, &data.test, data.facts)
}

/// Worker count for a batch of runs: the explicit cap if one is given,
/// otherwise the hardware parallelism, never more than the run count and
/// never less than one.
pub fn resolve_workers(cap: Option<usize>, hardware: usize, runs: usize) -> usize {
    let runs = runs.max(1);
    match cap {
        Some(c) => c.max(1).min(runs),
        None => hardware.max(1).min(runs),
    }
}

fn worker_count(runs: usize) -> usize {
    let cap = std::env::var("RCALAD_THREADS").ok().and_then(|s| s.parse::<usize>().ok());
    let hardware = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    resolve_workers(cap, hardware, runs)
}

/// Runs the whole experiment: stage the data, execute every run, aggregate,
/// and (when an output directory is given) emit the report and dumps. The
/// returned report contains a row per run; failed runs carry an error
/// marker instead of aborting the others.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    cfg.validate()?;
    let source = stage_data(cfg)?;
    let runs = cfg.run.runs;
    let workers = worker_count(runs);
    let out_dir = opts.out_dir.as_deref();

    let slots: Mutex<Vec<Option<RunOutcome>>> = Mutex::new((0..runs).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::Relaxed);
                if r >= runs {
                    break;
                }
                let outcome = execute_run(cfg, r, &source, out_dir, opts.final_checkpoint);
                slots.lock().expect("no panics hold the slot lock")[r] = Some(outcome);
            });
        }
    });
    let outcomes: Vec<RunOutcome> = slots
        .into_inner()
        .expect("worker threads joined")
        .into_iter()
        .map(|slot| slot.expect("every run index was claimed"))
        .collect();

    let score_used = cfg.score_kind()?.fallback(&cfg.train.toggles());
    let report = build_report(cfg, score_used, &outcomes, opts.baseline_f1.as_deref());
    if let Some(dir) = out_dir {
        emit_report(&report, &outcomes, dir)?;
    }
    Ok(report)
}
