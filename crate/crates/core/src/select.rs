//! Choice of the bin count by test CRPS on an alternating split.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::BinLayout;
use crate::cost_matrix::{CostMatrix, PrecomputeOptions};
use crate::crps::{crps_ecdf, Ecdf};
use crate::dataset::{alternating_split, SortedDataset};
use crate::partition::{DpTables, Partition, DEFAULT_MIN_BIN};
use crate::{Error, Result, FORMAT_VERSION};

/// Smallest dataset [`select_k`] accepts.
pub const MIN_SELECT_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KCurveEntry {
    pub k: usize,
    /// `+inf` when infeasible.
    pub test_crps: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCurve {
    pub entries: Vec<KCurveEntry>,
    pub k_star: usize,
    pub k_max: usize,
}

impl KCurve {
    pub fn test_crps(&self, k: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.k == k).map(|e| e.test_crps)
    }
}

/// `dp[K][n]` on the full data, for the optimism diagnostic only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooCurve {
    pub entries: Vec<(usize, f64)>,
}

impl LooCurve {
    pub fn value(&self, k: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == k).map(|e| e.1)
    }

    /// True when no value exceeds its predecessor.
    pub fn is_non_increasing(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| !w[1].1.is_finite() || w[1].1 <= w[0].1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    /// Replaces the default `floor(n / 10)`.
    pub k_max: Option<usize>,
    pub m_min: usize,
    pub precompute: PrecomputeOptions,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            k_max: None,
            m_min: DEFAULT_MIN_BIN,
            precompute: PrecomputeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub kcurve: KCurve,
    pub loo: LooCurve,
}

/// Mean CRPS of the test points against the ECDF of the training bin their
/// covariate falls in.
pub fn test_crps(train: &SortedDataset, test: &SortedDataset, p: &Partition) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTest);
    }
    let layout = BinLayout::from_partition(train, p);
    let ys = train.ys();
    let ecdfs = layout
        .ranges
        .iter()
        .map(|r| Ecdf::new(ys[r.clone()].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = test
        .observations()
        .iter()
        .map(|o| crps_ecdf(&ecdfs[layout.locate(o.x)], o.y))
        .sum();
    Ok(total / test.len() as f64)
}

/// TestCRPS curve over `K = 1..=K_max` and its argmin (ties to the smaller
/// `K`), plus the full-data leave-one-out curve.
pub fn select_k(ds: &SortedDataset, opts: &SelectOptions) -> Result<Selection> {
    let n = ds.len();
    if n < MIN_SELECT_N {
        return Err(Error::DatasetTooSmall {
            needed: MIN_SELECT_N,
            got: n,
        });
    }
    let m_min = opts.m_min.max(1);
    let k_max = opts.k_max.unwrap_or(n / 10).max(1);
    let split = alternating_split(ds)?;
    let k_feasible = k_max.min(split.train.len() / m_min);
    if k_feasible == 0 {
        return Err(Error::AllKInfeasible { k_max });
    }

    let cm = CostMatrix::from_dataset(&split.train, &opts.precompute)?;
    let tables = DpTables::solve(&cm, k_feasible, m_min)?;
    let scores = (1..=k_feasible)
        .into_par_iter()
        .map(|k| test_crps(&split.train, &split.test, &tables.partition(k)?))
        .collect::<Result<Vec<_>>>()?;
    let entries: Vec<KCurveEntry> = (1..=k_max)
        .map(|k| match scores.get(k - 1) {
            Some(&s) => KCurveEntry {
                k,
                test_crps: s,
                feasible: true,
            },
            None => KCurveEntry {
                k,
                test_crps: f64::INFINITY,
                feasible: false,
            },
        })
        .collect();
    let mut k_star = 1;
    for e in entries.iter().filter(|e| e.feasible) {
        if e.test_crps < entries[k_star - 1].test_crps {
            k_star = e.k;
        }
    }

    let full_cm = CostMatrix::from_dataset(ds, &opts.precompute)?;
    let k_full = k_max.min(n / m_min);
    let full = DpTables::solve(&full_cm, k_full, m_min)?;
    let loo = LooCurve {
        entries: (1..=k_max)
            .map(|k| {
                let v = if k <= k_full {
                    full.value(k, n)
                } else {
                    f64::INFINITY
                };
                (k, v)
            })
            .collect(),
    };

    Ok(Selection {
        kcurve: KCurve {
            entries,
            k_star,
            k_max,
        },
        loo,
    })
}

/// CSV `K,loo_total,test_crps,feasible` after a `#` line carrying the format
/// version and `config` (a JSON value).
pub fn write_curve_csv(
    mut out: impl Write,
    sel: &Selection,
    config: &serde_json::Value,
) -> Result<()> {
    writeln!(
        out,
        "# crpsbin format_version={FORMAT_VERSION} config={config}"
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K", "loo_total", "test_crps", "feasible"])?;
    for e in &sel.kcurve.entries {
        let loo = sel.loo.value(e.k).unwrap_or(f64::INFINITY);
        w.write_record([
            e.k.to_string(),
            format_real(loo),
            format_real(e.test_crps),
            e.feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal; infinities as `inf` / `-inf`.
pub fn format_real(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:?}")
    }
}
