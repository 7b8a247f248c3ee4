//! Report assembly, artifact emission, and re-derivation from dumps.
//!
//! A report is one JSON document: provenance (config hash, seed, dataset,
//! variant, score), the per-run metrics with any failure markers, the
//! cross-run mean and sample standard deviation, and an optional
//! signed-rank comparison against a baseline's per-run F1 values. Next to
//! it, each successful run leaves a raw score dump (`scores.csv`) and a
//! per-epoch loss history (`loss_history.csv`). The dumps carry enough to
//! recompute every threshold metric: [`metrics_from_columns`] on a re-read
//! dump reproduces the report's numbers exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::score::{orient_column, OrientationConvention, ScoreKind, SCORE_KINDS};
use crate::stats::{auroc, prf1, threshold_flags, ConfusionCounts, Metrics, WilcoxonResult};
use crate::train::TrainHistory;

// fmt_f64 lives in the score module next to the canonical dump writer.
use crate::score::fmt_f64;

/// One run's row in the report. A failed run keeps its slot with the error
/// recorded and every number zeroed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    /// True when a zero denominator forced a rate to the 0 convention.
    pub undefined_rates: bool,
    pub counts: ConfusionCounts,
    /// Rows flagged anomalous by the contamination threshold.
    pub flagged: usize,
    pub epochs: usize,
    pub final_d_loss: f64,
    pub final_ge_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The experiment report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub dataset: String,
    /// The model family member the toggles correspond to, or `custom`.
    pub variant: String,
    /// The score column actually used (after any availability fallback).
    pub score: String,
    pub alpha: f64,
    pub seed: u64,
    /// Encoded feature count the networks saw.
    pub feature_width: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Mean over successful runs, duplicated from `mean` for quick reading.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    /// Successful runs; failures appear in `runs` with an error marker.
    pub n_runs: usize,
    pub mean: Metrics,
    pub std: Metrics,
    pub wilcoxon: Option<WilcoxonResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon_note: Option<String>,
    pub runs: Vec<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_secs: Option<f64>,
}

impl Report {
    /// Serializes with a trailing newline; byte-stable for a given report.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Report> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Report::from_json(&text)
    }

    /// Per-run F1 values of the successful runs, in run order; the pairing
    /// input for a signed-rank comparison between two reports.
    pub fn run_f1s(&self) -> Vec<f64> {
        self.runs.iter().filter(|r| r.error.is_none()).map(|r| r.f1).collect()
    }
}

/// Writes one epoch per row: the epoch index, how many minibatches
/// contributed, and the mean of every loss term. Terms a variant does not
/// train stay empty.
pub fn write_loss_history_csv<W: Write>(w: &mut W, history: &TrainHistory) -> std::io::Result<()> {
    writeln!(
        w,
        "epoch,batches,d_total,ge_total,d_xz_real,d_xz_fake,d_xx_real,d_xx_fake,d_zz_real,d_zz_fake,d_xxzz_real,d_xxzz_fake,sigma"
    )?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for e in &history.epochs {
        let m = &e.mean;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.batches,
            fmt_f64(m.d_total),
            fmt_f64(m.ge_total),
            fmt_f64(m.d_xz_real),
            fmt_f64(m.d_xz_fake),
            opt(m.d_xx_real),
            opt(m.d_xx_fake),
            opt(m.d_zz_real),
            opt(m.d_zz_fake),
            opt(m.d_xxzz_real),
            opt(m.d_xxzz_fake),
            opt(m.sigma),
        )?;
    }
    Ok(())
}

/// Reads a score dump back: the six raw columns (absent ones as `None`) and
/// the labels if the dump had them. Accepts exactly the header the dump
/// writers produce.
pub fn read_scores_csv(path: &Path) -> Result<(Vec<(ScoreKind, Option<Vec<f64>>)>, Option<Vec<u8>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or(Error::Ingest { row: 1, what: "empty score dump".into() })?;
    let expected = "sample_id,a_l1,a_l2,a_logits,a_features,a_fm,a_all,label";
    if header != expected {
        return Err(Error::Ingest {
            row: 1,
            what: format!("header `{header}` is not the score dump header `{expected}`"),
        });
    }
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); SCORE_KINDS.len()];
    let mut labels: Vec<Option<u8>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(Error::Ingest {
                row,
                what: format!("expected 8 cells, found {}", cells.len()),
            });
        }
        for (j, cell) in cells[1..7].iter().enumerate() {
            let value = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| Error::Ingest {
                    row,
                    what: format!("`{cell}` is not a number"),
                })?)
            };
            columns[j].push(value);
        }
        labels.push(if cells[7].is_empty() {
            None
        } else {
            match cells[7] {
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(Error::Ingest {
                        row,
                        what: format!("label `{other}` is not 0 or 1"),
                    })
                }
            }
        });
    }
    let mut out = Vec::with_capacity(SCORE_KINDS.len());
    for (kind, col) in SCORE_KINDS.into_iter().zip(columns) {
        let filled = col.iter().filter(|v| v.is_some()).count();
        let column = match filled {
            0 => None,
            n if n == col.len() => Some(col.into_iter().flatten().collect()),
            _ => {
                return Err(Error::Ingest {
                    row: 1,
                    what: format!("column {} is only partially filled", kind.column()),
                })
            }
        };
        out.push((kind, column));
    }
    let filled = labels.iter().filter(|v| v.is_some()).count();
    let labels = match filled {
        0 => None,
        n if n == labels.len() => Some(labels.into_iter().flatten().collect()),
        _ => {
            return Err(Error::Ingest { row: 1, what: "label column is only partially filled".into() })
        }
    };
    Ok((out, labels))
}

/// Recomputes the threshold metrics and AUROC from raw score columns, as
/// [`run_experiment`] does: orient the chosen column, flag the top `alpha`
/// fraction, compare against the labels.
///
/// [`run_experiment`]: crate::exp::run_experiment
pub fn metrics_from_columns(
    columns: &[(ScoreKind, Option<Vec<f64>>)],
    labels: &[u8],
    kind: ScoreKind,
    conv: &OrientationConvention,
    alpha: f64,
) -> Result<(ConfusionCounts, Metrics)> {
    let raw = columns
        .iter()
        .find(|(k, _)| *k == kind)
        .and_then(|(_, col)| col.as_ref())
        .ok_or_else(|| Error::Invalid(format!("score dump has no `{}` column", kind.column())))?;
    let oriented = orient_column(kind, raw, conv);
    let flags = threshold_flags(&oriented, alpha)?;
    let (counts, mut metrics) = prf1(&flags, labels)?;
    metrics.auroc = auroc(&oriented, labels)?;
    Ok((counts, metrics))
}

/// What one successful run hands the reporter: its metrics, the raw score
/// columns and labels behind them, and the loss history.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub facts: DataFacts,
    pub metrics: Metrics,
    pub counts: ConfusionCounts,
    pub flagged: usize,
    pub columns: Vec<(ScoreKind, Option<Vec<f64>>)>,
    pub labels: Vec<u8>,
    pub history: TrainHistory,
}

/// Shape facts about the prepared data, recorded for provenance.
#[derive(Clone, Copy, Debug, Default)]
pub struct DataFacts {
    pub feature_width: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

/// A run error tagged with the stage that raised it.
#[derive(Debug)]
pub struct RunFailure {
    pub stage: &'static str,
    pub error: Error,
}

/// One run slot: artifacts, or the error that stopped the run.
pub type RunOutcome = std::result::Result<RunArtifacts, RunFailure>;

fn zero_metrics() -> Metrics {
    Metrics { precision: 0.0, recall: 0.0, f1: 0.0, auroc: 0.0, undefined_rates: false }
}

fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Sample standard deviation; zero when fewer than two values.
fn std_of(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean_of(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Assembles the report: per-run rows (failures keep their slot with an
/// error marker and zeroed numbers), mean and sample standard deviation
/// over the successes, and optionally a signed-rank comparison of per-run
/// F1 against a baseline's. Shape facts come from the first successful
/// run; with no successes they stay zero.
pub fn build_report(
    cfg: &crate::exp::ExperimentConfig,
    score_used: ScoreKind,
    outcomes: &[RunOutcome],
    baseline_f1: Option<&[f64]>,
) -> Report {
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut ok: Vec<&RunArtifacts> = Vec::new();
    for (r, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(a) => {
                let last = a.history.epochs.last();
                runs.push(RunReport {
                    run: r,
                    precision: a.metrics.precision,
                    recall: a.metrics.recall,
                    f1: a.metrics.f1,
                    auroc: a.metrics.auroc,
                    undefined_rates: a.metrics.undefined_rates,
                    counts: a.counts,
                    flagged: a.flagged,
                    epochs: a.history.epochs.len(),
                    final_d_loss: last.map_or(0.0, |e| e.mean.d_total),
                    final_ge_loss: last.map_or(0.0, |e| e.mean.ge_total),
                    wall_secs: cfg.run.emit_timing.then_some(a.history.wall_secs),
                    error: None,
                });
                ok.push(a);
            }
            Err(f) => runs.push(RunReport {
                run: r,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                auroc: 0.0,
                undefined_rates: false,
                counts: ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0 },
                flagged: 0,
                epochs: 0,
                final_d_loss: 0.0,
                final_ge_loss: 0.0,
                wall_secs: None,
                error: Some(format!("{} stage: {}: {}", f.stage, f.error.code(), f.error)),
            }),
        }
    }

    let pick = |f: fn(&Metrics) -> f64| -> Vec<f64> { ok.iter().map(|a| f(&a.metrics)).collect() };
    let (mean, std) = if ok.is_empty() {
        (zero_metrics(), zero_metrics())
    } else {
        let p = pick(|m| m.precision);
        let r = pick(|m| m.recall);
        let f = pick(|m| m.f1);
        let au = pick(|m| m.auroc);
        (
            Metrics {
                precision: mean_of(&p),
                recall: mean_of(&r),
                f1: mean_of(&f),
                auroc: mean_of(&au),
                undefined_rates: ok.iter().any(|a| a.metrics.undefined_rates),
            },
            Metrics {
                precision: std_of(&p),
                recall: std_of(&r),
                f1: std_of(&f),
                auroc: std_of(&au),
                undefined_rates: false,
            },
        )
    };

    let f1s: Vec<f64> = ok.iter().map(|a| a.metrics.f1).collect();
    let (wilcoxon, wilcoxon_note) = match baseline_f1 {
        None => (None, None),
        Some(base) => {
            if base.len() != f1s.len() {
                (
                    None,
                    Some(format!(
                        "comparison skipped: {} successful runs here vs {} baseline values",
                        f1s.len(),
                        base.len()
                    )),
                )
            } else {
                match crate::stats::wilcoxon_signed_rank(&f1s, base) {
                    Ok(w) => (Some(w), None),
                    Err(e) => (None, Some(format!("comparison skipped: {e}"))),
                }
            }
        }
    };

    let total_wall: f64 = ok.iter().map(|a| a.history.wall_secs).sum();
    let facts = ok.first().map_or(DataFacts::default(), |a| a.facts);
    Report {
        config_hash: cfg.config_hash(),
        dataset: cfg.dataset.label().to_string(),
        variant: cfg.train.variant_name().to_string(),
        score: score_used.name().to_string(),
        alpha: cfg.alpha(),
        seed: cfg.run.seed,
        feature_width: facts.feature_width,
        n_train: facts.n_train,
        n_validation: facts.n_validation,
        n_test: facts.n_test,
        precision: mean.precision,
        recall: mean.recall,
        f1: mean.f1,
        auroc: mean.auroc,
        n_runs: ok.len(),
        mean,
        std,
        wilcoxon,
        wilcoxon_note,
        runs,
        wall_secs: cfg.run.emit_timing.then_some(total_wall),
    }
}

/// Writes `report.json` plus, for every successful run, `run{r}/scores.csv`
/// and `run{r}/loss_history.csv` under `dir`. Returns the report path.
pub fn emit_report(
    report: &Report,
    outcomes: &[RunOutcome],
    dir: &Path,
) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, report.to_json()).map_err(|e| io_err(&report_path, e))?;
    for (r, outcome) in outcomes.iter().enumerate() {
        let Ok(a) = outcome else { continue };
        let run_dir = dir.join(format!("run{r}"));
        std::fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;

        let scores_path = run_dir.join("scores.csv");
        let mut buf = Vec::new();
        crate::score::write_score_columns_csv(&mut buf, a.labels.len(), &a.columns, Some(&a.labels))
            .map_err(|e| io_err(&scores_path, e))?;
        std::fs::write(&scores_path, buf).map_err(|e| io_err(&scores_path, e))?;

        let losses_path = run_dir.join("loss_history.csv");
        let mut buf = Vec::new();
        write_loss_history_csv(&mut buf, &a.history).map_err(|e| io_err(&losses_path, e))?;
        std::fs::write(&losses_path, buf).map_err(|e| io_err(&losses_path, e))?;
    }
    Ok(report_path)
}
