//! Synthetic datasets: two 2-d toys and two generators shaped like the
//! tabular benchmarks.
//!
//! The benchmark-shaped tables share one construction: normal rows live on a
//! low-rank linear manifold plus small isotropic noise, while most anomalies
//! are full-rank draws that no point of the manifold is close to. A minority
//! of anomalies are drawn exactly like normal rows, which caps the reachable
//! F1 below 1 on purpose: a detector can only ever find the off-manifold
//! part, so scores land in a band rather than saturating.
//!
//! All generators consume a caller-provided [`RngStream`] with a documented
//! draw order, so a seed pins the dataset byte for byte.

use crate::autodiff::rng::RngStream;
use crate::data::table::{ColumnKind, ColumnSpec, Schema, Table};
use crate::error::{Error, Result};

/// Shape of a 2-d toy dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    /// Normal points on the unit circle plus noise; anomalies uniform in
    /// `[-3,3]^2` with radius outside `[0.7, 1.3]`.
    GaussianRing,
    /// Normal points around `(-1.5, 0)`, anomalies around `(1.5, 0)`.
    TwoGaussians,
}

/// Parameters for [`synth_toy`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub noise_std: f64,
}

impl ToySpec {
    /// The ring with its usual noise level.
    pub fn ring(n_normal: usize, n_anomaly: usize) -> ToySpec {
        ToySpec { kind: ToyKind::GaussianRing, n_normal, n_anomaly, noise_std: 0.1 }
    }

    /// Two separated blobs with its usual noise level.
    pub fn blobs(n_normal: usize, n_anomaly: usize) -> ToySpec {
        ToySpec { kind: ToyKind::TwoGaussians, n_normal, n_anomaly, noise_std: 0.3 }
    }
}

/// Generates a labeled 2-column table: all normal rows first, then all
/// anomalies.
pub fn synth_toy(spec: &ToySpec, rng: &mut RngStream) -> Result<Table> {
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::Invalid(format!("noise_std must be finite and >= 0, got {}", spec.noise_std)));
    }
    let n = spec.n_normal + spec.n_anomaly;
    let mut cont = Vec::with_capacity(n * 2);
    match spec.kind {
        ToyKind::GaussianRing => {
            for _ in 0..spec.n_normal {
                let theta = rng.uniform(0.0, std::f64::consts::TAU);
                cont.push(theta.cos() + spec.noise_std * rng.normal());
                cont.push(theta.sin() + spec.noise_std * rng.normal());
            }
            for _ in 0..spec.n_anomaly {
                loop {
                    let x = rng.uniform(-3.0, 3.0);
                    let y = rng.uniform(-3.0, 3.0);
                    let r = (x * x + y * y).sqrt();
                    if !(0.7..=1.3).contains(&r) {
                        cont.push(x);
                        cont.push(y);
                        break;
                    }
                }
            }
        }
        ToyKind::TwoGaussians => {
            for i in 0..n {
                let center = if i < spec.n_normal { -1.5 } else { 1.5 };
                cont.push(center + spec.noise_std * rng.normal());
                cont.push(spec.noise_std * rng.normal());
            }
        }
    }
    let labels = (0..n).map(|i| u8::from(i >= spec.n_normal)).collect();
    Ok(Table {
        schema: Schema::continuous(2, true),
        cont,
        cats: vec![],
        labels: Some(labels),
        n,
    })
}

/// Fills rows of a rank-`k` linear manifold: each row is `u @ loadings`
/// plus isotropic noise, with `u` standard normal in `k` dimensions.
fn manifold_rows(
    out: &mut Vec<f64>,
    rows: usize,
    loadings: &[f64],
    k: usize,
    d: usize,
    noise: f64,
    rng: &mut RngStream,
) {
    let mut u = vec![0.0; k];
    for _ in 0..rows {
        for uf in u.iter_mut() {
            *uf = rng.normal();
        }
        for j in 0..d {
            let mut v = 0.0;
            for (f, &uf) in u.iter().enumerate() {
                v += uf * loadings[f * d + j];
            }
            out.push(v + noise * rng.normal());
        }
    }
}

/// A stand-in with the arrhythmia table's width: 274 continuous columns,
/// 107 normal rows on a rank-8 manifold, and 40 anomalies of which 22 are
/// full-rank (findable) and 18 are manifold draws (indistinguishable from
/// normal by construction). Sized so the default split leaves exactly 64
/// normal training rows.
pub fn arrhythmia_like(rng: &mut RngStream) -> Table {
    const D: usize = 274;
    const K: usize = 8;
    const N_NORMAL: usize = 107;
    const N_BLATANT: usize = 22;
    const N_MANIFOLD: usize = 18;
    let mut loadings = vec![0.0; K * D];
    rng.fill_normal(&mut loadings, 0.0, (1.0 / K as f64).sqrt());

    let n = N_NORMAL + N_BLATANT + N_MANIFOLD;
    let mut cont = Vec::with_capacity(n * D);
    manifold_rows(&mut cont, N_NORMAL, &loadings, K, D, 0.05, rng);
    for _ in 0..N_BLATANT * D {
        cont.push(rng.normal());
    }
    manifold_rows(&mut cont, N_MANIFOLD, &loadings, K, D, 0.05, rng);

    let labels = (0..n).map(|i| u8::from(i >= N_NORMAL)).collect();
    Table {
        schema: Schema::continuous(D, true),
        cont,
        cats: vec![],
        labels: Some(labels),
        n,
    }
}

/// Category counts of the KDD-shaped table's seven categorical columns.
/// With 34 continuous columns the one-hot width is 34 + 87 = 121.
pub const KDD_LIKE_CARDINALITIES: [usize; 7] = [3, 65, 11, 2, 2, 2, 2];

/// A stand-in with the KDD table's encoded width: 34 continuous plus 7
/// categorical columns, 24000 normal rows on a rank-6 manifold and 6000
/// anomalies (20%), of which a tenth are manifold draws. Categories are
/// uniform for every class, so all the signal is in the continuous block.
pub fn kdd_like(rng: &mut RngStream) -> Table {
    const D: usize = 34;
    const K: usize = 6;
    const N_NORMAL: usize = 24000;
    const N_BLATANT: usize = 5400;
    const N_MANIFOLD: usize = 600;
    let mut loadings = vec![0.0; K * D];
    rng.fill_normal(&mut loadings, 0.0, (1.0 / K as f64).sqrt());

    let n = N_NORMAL + N_BLATANT + N_MANIFOLD;
    let mut cont = Vec::with_capacity(n * D);
    manifold_rows(&mut cont, N_NORMAL, &loadings, K, D, 0.1, rng);
    let mut blatant = vec![0.0; N_BLATANT * D];
    rng.fill_normal(&mut blatant, 0.0, 1.5);
    cont.extend_from_slice(&blatant);
    manifold_rows(&mut cont, N_MANIFOLD, &loadings, K, D, 0.1, rng);

    let mut cats: Vec<Vec<String>> = KDD_LIKE_CARDINALITIES.iter().map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        for (col, &card) in cats.iter_mut().zip(&KDD_LIKE_CARDINALITIES) {
            col.push(format!("v{}", rng.index(card)));
        }
    }

    let mut columns: Vec<ColumnSpec> = (0..D)
        .map(|i| ColumnSpec { name: format!("c{i}"), kind: ColumnKind::Continuous })
        .collect();
    for i in 0..KDD_LIKE_CARDINALITIES.len() {
        columns.push(ColumnSpec { name: format!("k{i}"), kind: ColumnKind::Categorical });
    }
    columns.push(ColumnSpec { name: "label".into(), kind: ColumnKind::Label });

    let labels = (0..n).map(|i| u8::from(i >= N_NORMAL)).collect();
    Table {
        schema: Schema { has_header: true, columns },
        cont,
        cats,
        labels: Some(labels),
        n,
    }
}
