//! Exact optimal K-partition of the sorted observations.
//!
//! `dp[k][j]` is the least total cost of splitting the first `j` observations
//! into `k` contiguous bins:
//!
//! ```text
//! dp[k][j] = min_i dp[k-1][i] + c(i, j-1)      (bin covers i..j, 0-based)
//! ```
//!
//! Bins shorter than `m_min` are never proposed. Ties keep the smallest `i`,
//! so among equally good partitions the one with the lexicographically
//! smallest (last boundary, second-to-last boundary, ...) wins.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_matrix::CostMatrix;
use crate::{Error, Result};

/// Smallest bin that has a leave-one-out distribution.
pub const DEFAULT_MIN_BIN: usize = 2;

/// Bin boundaries `0 = b_0 < b_1 < ... < b_K = n`; bin `k` holds the sorted
/// indices `b_{k-1}..b_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    boundaries: Vec<usize>,
    total_cost: f64,
}

impl Partition {
    /// Validates boundaries against `n` and prices them with `cm`.
    pub fn from_boundaries(cm: &CostMatrix, boundaries: Vec<usize>) -> Result<Self> {
        let total_cost = partition_cost_raw(cm, &boundaries)?;
        Ok(Self {
            boundaries,
            total_cost,
        })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn k(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn n(&self) -> usize {
        *self.boundaries.last().expect("non-empty boundaries")
    }

    pub fn bins(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    pub fn bin_sizes(&self) -> Vec<usize> {
        self.bins().map(|r| r.len()).collect()
    }
}

fn validate(n: usize, boundaries: &[usize]) -> Result<()> {
    if boundaries.len() < 2 {
        return Err(Error::InvalidBoundaries(
            "need at least two boundaries".into(),
        ));
    }
    if boundaries[0] != 0 || *boundaries.last().unwrap() != n {
        return Err(Error::InvalidBoundaries(format!(
            "boundaries must run from 0 to {n}"
        )));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBoundaries(
            "boundaries must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn partition_cost_raw(cm: &CostMatrix, boundaries: &[usize]) -> Result<f64> {
    validate(cm.n(), boundaries)?;
    Ok(boundaries
        .windows(2)
        .fold(0.0, |acc, w| acc + cm.get(w[0], w[1] - 1)))
}

/// Sum of bin costs, accumulated left to right as the DP does.
pub fn partition_cost(cm: &CostMatrix, p: &Partition) -> Result<f64> {
    partition_cost_raw(cm, p.boundaries())
}

fn check_k(n: usize, k: usize, m_min: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if k * m_min > n {
        return Err(Error::InfeasibleK { k, n, m_min });
    }
    Ok(())
}

/// Full DP tables for `k = 0..=k_max`, kept for backtracking.
#[derive(Debug, Clone)]
pub struct DpTables {
    n: usize,
    k_max: usize,
    m_min: usize,
    /// `(k_max + 1) x (n + 1)`, row-major.
    dp: Vec<f64>,
    split: Vec<usize>,
}

/// One DP layer from the previous one. Entry `j` is `(value, argmin)`.
fn next_layer(cm: &CostMatrix, prev: &[f64], k: usize, m_min: usize) -> Vec<(f64, usize)> {
    let n = cm.n();
    let first_j = k * m_min;
    (0..=n)
        .into_par_iter()
        .map(|j| {
            if j < first_j {
                return (f64::INFINITY, 0);
            }
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for i in (k - 1) * m_min..=j - m_min {
                let v = prev[i] + cm.get(i, j - 1);
                if v < best {
                    best = v;
                    arg = i;
                }
            }
            (best, arg)
        })
        .collect()
}

impl DpTables {
    /// Fills every layer up to `k_max` in O(n^2 k_max).
    pub fn solve(cm: &CostMatrix, k_max: usize, m_min: usize) -> Result<Self> {
        let n = cm.n();
        let m_min = m_min.max(1);
        check_k(n, k_max, m_min)?;
        let width = n + 1;
        let mut dp = vec![f64::INFINITY; (k_max + 1) * width];
        let mut split = vec![0usize; (k_max + 1) * width];
        dp[0] = 0.0;
        for k in 1..=k_max {
            let (done, rest) = dp.split_at_mut(k * width);
            let prev = &done[(k - 1) * width..];
            let layer = next_layer(cm, prev, k, m_min);
            for (j, (v, arg)) in layer.into_iter().enumerate() {
                rest[j] = v;
                split[k * width + j] = arg;
            }
        }
        Ok(Self {
            n,
            k_max,
            m_min,
            dp,
            split,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn m_min(&self) -> usize {
        self.m_min
    }

    /// Least cost of `k` bins over the first `j` observations.
    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.dp[k * (self.n + 1) + j]
    }

    pub fn split(&self, k: usize, j: usize) -> usize {
        self.split[k * (self.n + 1) + j]
    }

    /// Optimal `k`-partition of all `n` observations by backtracking.
    pub fn partition(&self, k: usize) -> Result<Partition> {
        check_k(self.n, k, self.m_min)?;
        if k > self.k_max {
            return Err(Error::InfeasibleK {
                k,
                n: self.n,
                m_min: self.m_min,
            });
        }
        let mut boundaries = vec![0; k + 1];
        boundaries[k] = self.n;
        let mut j = self.n;
        for layer in (1..=k).rev() {
            j = self.split(layer, j);
            boundaries[layer - 1] = j;
        }
        Ok(Partition {
            boundaries,
            total_cost: self.value(k, self.n),
        })
    }
}

/// Optimal `k`-partition with bins of at least `m_min` observations.
pub fn optimal_partition(cm: &CostMatrix, k: usize, m_min: usize) -> Result<Partition> {
    DpTables::solve(cm, k, m_min)?.partition(k)
}

/// `dp[k][n]` only, holding two layers at a time.
pub fn optimal_cost(cm: &CostMatrix, k: usize, m_min: usize) -> Result<f64> {
    let m_min = m_min.max(1);
    check_k(cm.n(), k, m_min)?;
    let mut prev = vec![f64::INFINITY; cm.n() + 1];
    prev[0] = 0.0;
    for layer in 1..=k {
        prev = next_layer(cm, &prev, layer, m_min)
            .into_iter()
            .map(|(v, _)| v)
            .collect();
    }
    Ok(prev[cm.n()])
}

/// Largest `n` the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    /// Best partition under the DP's tie-break.
    pub best: Partition,
    /// Partitions honouring the minimum bin size.
    pub feasible: usize,
    /// Partitions whose cost is within `1e-12` (relative) of the best.
    pub optimal: usize,
}

/// Enumerates every `k`-partition with bins of at least `m_min` observations.
pub fn brute_force_partition(cm: &CostMatrix, k: usize, m_min: usize) -> Result<BruteForceResult> {
    let n = cm.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::OracleTooLarge {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    let m_min = m_min.max(1);
    check_k(n, k, m_min)?;

    let mut all: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut current = vec![0usize];
    enumerate(cm, k, m_min, &mut current, 0.0, &mut all);

    // smallest cost, then smallest last boundary, then second-to-last, ...
    let better = |a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)| {
        a.0 < b.0 || (a.0 == b.0 && a.1.iter().rev().lt(b.1.iter().rev()))
    };
    let mut best = &all[0];
    for cand in &all[1..] {
        if better(cand, best) {
            best = cand;
        }
    }
    let tol = 1e-12 * best.0.abs();
    let optimal = all.iter().filter(|c| c.0 - best.0 <= tol).count();
    Ok(BruteForceResult {
        best: Partition {
            boundaries: best.1.clone(),
            total_cost: best.0,
        },
        feasible: all.len(),
        optimal,
    })
}

fn enumerate(
    cm: &CostMatrix,
    bins_left: usize,
    m_min: usize,
    current: &mut Vec<usize>,
    cost: f64,
    out: &mut Vec<(f64, Vec<usize>)>,
) {
    let n = cm.n();
    let start = *current.last().unwrap();
    if bins_left == 1 {
        if n - start >= m_min {
            current.push(n);
            out.push((cost + cm.get(start, n - 1), current.clone()));
            current.pop();
        }
        return;
    }
    let last = n - (bins_left - 1) * m_min;
    for end in start + m_min..=last {
        current.push(end);
        enumerate(
            cm,
            bins_left - 1,
            m_min,
            current,
            cost + cm.get(start, end - 1),
            out,
        );
        current.pop();
    }
}
