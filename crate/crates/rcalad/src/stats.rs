//! Detection metrics and run-level statistics.
//!
//! Classification uses the contamination convention: given scores oriented
//! so that larger means more anomalous and an assumed anomaly fraction α,
//! exactly `⌈αN⌉` rows are flagged. Precision, recall, and F1 then measure
//! the anomaly class; AUROC measures the ranking itself, independent of α.
//! Across repeated runs, [`aggregate_runs`] reports means and sample
//! standard deviations, and [`wilcoxon_signed_rank`] compares two paired
//! runs of a metric, with exact p-values for up to 12 nonzero differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion matrix for the anomaly (label 1) class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Threshold metrics plus ranking quality for one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    /// True when a zero denominator forced precision, recall, or F1 to the
    /// 0 convention.
    pub undefined_rates: bool,
}

/// Mean and sample standard deviation of each metric over repeated runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub n_runs: usize,
    pub mean: Metrics,
    pub std: Metrics,
}

/// Paired two-sided signed-rank test result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// The smaller of the positive and negative rank sums.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n: usize,
}

/// Rounds away float dust before the ceiling, so a mathematically integral
/// `α·N` is never pushed up a step.
fn ceil_flags(alpha: f64, n: usize) -> usize {
    ((alpha * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Flags the `⌈αN⌉` rows with the largest oriented scores; ties are broken
/// by ascending row index.
pub fn threshold_flags(oriented: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0,1], got {alpha}")));
    }
    if oriented.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("scores contain NaN".into()));
    }
    let k = ceil_flags(alpha, oriented.len());
    let mut order: Vec<usize> = (0..oriented.len()).collect();
    order.sort_by(|&a, &b| {
        oriented[b]
            .partial_cmp(&oriented[a])
            .expect("scores checked for NaN")
            .then(a.cmp(&b))
    });
    let mut flags = vec![false; oriented.len()];
    for &i in order.iter().take(k) {
        flags[i] = true;
    }
    Ok(flags)
}

/// Confusion counts and precision/recall/F1 for the anomaly class. Zero
/// denominators yield 0 with the `undefined_rates` flag set. The returned
/// metrics leave `auroc` at 0; fill it from [`auroc`].
pub fn prf1(flags: &[bool], labels: &[u8]) -> Result<(ConfusionCounts, Metrics)> {
    if flags.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "prf1",
            left: vec![flags.len()],
            right: vec![labels.len()],
        });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let mut undefined = false;
    let mut rate = |num: usize, den: usize| {
        if den == 0 {
            undefined = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = rate(c.tp, c.tp + c.fp);
    let recall = rate(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined = true;
        0.0
    };
    Ok((c, Metrics { precision, recall, f1, auroc: 0.0, undefined_rates: undefined }))
}

/// Midranks (1-based, ties averaged) doubled so they stay integers.
fn double_midranks(values: &[f64]) -> Vec<u64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the midrank ((i+1)+(j+1))/2
        let r2 = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            ranks2[idx] = r2;
        }
        i = j + 1;
    }
    ranks2
}

/// Probability that a uniformly random anomaly outranks a uniformly random
/// normal sample, ties counting one half; computed from rank sums.
pub fn auroc(oriented: &[f64], labels: &[u8]) -> Result<f64> {
    if oriented.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "auroc",
            left: vec![oriented.len()],
            right: vec![labels.len()],
        });
    }
    if oriented.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("scores contain NaN".into()));
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Insufficient {
            what: "auroc with both classes",
            need: 1,
            have: 0,
        });
    }
    let ranks2 = double_midranks(oriented);
    let pos_rank2: u64 = ranks2
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .sum();
    let pos_ranks = pos_rank2 as f64 / 2.0;
    Ok((pos_ranks - (n1 * (n1 + 1)) as f64 / 2.0) / (n1 as f64 * n0 as f64))
}

/// Quadratic reference for [`auroc`]: counts concordant anomaly/normal
/// pairs directly. Kept public so independent checks can use it.
pub fn auroc_pairwise(oriented: &[f64], labels: &[u8]) -> Result<f64> {
    if oriented.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "auroc",
            left: vec![oriented.len()],
            right: vec![labels.len()],
        });
    }
    let pos: Vec<f64> = oriented
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = oriented
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Insufficient {
            what: "auroc with both classes",
            need: 1,
            have: 0,
        });
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Means and sample standard deviations (n−1 denominator; 0 for a single
/// run) of each metric.
pub fn aggregate_runs(runs: &[Metrics]) -> Result<RunAggregate> {
    if runs.is_empty() {
        return Err(Error::Insufficient { what: "run aggregation", need: 1, have: 0 });
    }
    let n = runs.len() as f64;
    let mean_of = |pick: fn(&Metrics) -> f64| runs.iter().map(pick).sum::<f64>() / n;
    let std_of = |pick: fn(&Metrics) -> f64, mean: f64| {
        if runs.len() < 2 {
            0.0
        } else {
            (runs.iter().map(|r| (pick(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
    };
    let undefined = runs.iter().any(|r| r.undefined_rates);
    let mp = mean_of(|r| r.precision);
    let mr = mean_of(|r| r.recall);
    let mf = mean_of(|r| r.f1);
    let ma = mean_of(|r| r.auroc);
    Ok(RunAggregate {
        n_runs: runs.len(),
        mean: Metrics { precision: mp, recall: mr, f1: mf, auroc: ma, undefined_rates: undefined },
        std: Metrics {
            precision: std_of(|r| r.precision, mp),
            recall: std_of(|r| r.recall, mr),
            f1: std_of(|r| r.f1, mf),
            auroc: std_of(|r| r.auroc, ma),
            undefined_rates: undefined,
        },
    })
}

/// Doubled midranks of the nonzero |differences| and their signs.
fn signed_rank_setup(a: &[f64], b: &[f64]) -> Result<(Vec<u64>, Vec<bool>)> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "wilcoxon",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).filter(|&d| d != 0.0).collect();
    if diffs.len() < 5 {
        return Err(Error::Insufficient {
            what: "nonzero differences",
            need: 5,
            have: diffs.len(),
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks2 = double_midranks(&abs);
    let positive = diffs.iter().map(|&d| d > 0.0).collect();
    Ok((ranks2, positive))
}

/// The smaller signed-rank sum in doubled units, plus the doubled total.
fn statistic2(ranks2: &[u64], positive: &[bool]) -> (u64, u64) {
    let w_plus2: u64 = ranks2
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(&r, _)| r)
        .sum();
    let total2: u64 = ranks2.iter().sum();
    (w_plus2.min(total2 - w_plus2), total2)
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided paired signed-rank test. Zero differences are dropped; at
/// least 5 nonzero pairs are required. Exact distribution (all `2^n` sign
/// assignments of the observed ranks) for n ≤ 12, normal approximation with
/// tie correction and continuity correction above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let (ranks2, positive) = signed_rank_setup(a, b)?;
    let n = ranks2.len();
    let (w2, total2) = statistic2(&ranks2, &positive);
    let statistic = w2 as f64 / 2.0;

    let p_value = if n <= 12 {
        // Count sign assignments with W+ at or below the observed minimum
        // side; the null distribution is symmetric, so doubling covers the
        // other tail.
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        for &r in &ranks2 {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let at_or_below: u64 = counts[..=w2 as usize].iter().sum();
        (2.0 * at_or_below as f64 / (1u64 << n) as f64).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        // Tie correction: subtract t^3 - t over each group of equal ranks.
        let mut sorted = ranks2.clone();
        sorted.sort_unstable();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            var -= (t * t * t - t) / 48.0;
            i = j + 1;
        }
        let z = (statistic - mean + 0.5) / var.sqrt();
        (2.0 * phi(z)).min(1.0)
    };
    Ok(WilcoxonResult { statistic, p_value, n })
}

/// Brute-force reference for the exact case: walks every sign assignment
/// explicitly. Independent of the counting logic in
/// [`wilcoxon_signed_rank`]; only meaningful for small n.
pub fn wilcoxon_signed_rank_enumerated(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let (ranks2, positive) = signed_rank_setup(a, b)?;
    let n = ranks2.len();
    assert!(n <= 20, "enumeration over 2^{n} assignments is unreasonable");
    let (w2, _) = statistic2(&ranks2, &positive);
    let mut below_plus = 0u64;
    for mask in 0u64..(1 << n) {
        let wp2: u64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| ranks2[i]).sum();
        if wp2 <= w2 {
            below_plus += 1;
        }
    }
    let p_value = (2.0 * below_plus as f64 / (1u64 << n) as f64).min(1.0);
    Ok(WilcoxonResult { statistic: w2 as f64 / 2.0, p_value, n })
}
