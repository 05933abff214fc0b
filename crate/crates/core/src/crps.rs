//! CRPS kernels for equally weighted atoms.
//!
//! For an ECDF with atoms `y_1..y_m`,
//! `CRPS(F, y) = mean_i |y_i - y| - W / m^2` with `W = sum_{l<r} |y_l - y_r|`.
//! The total leave-one-out CRPS of a bin collapses to `m W / (m - 1)^2`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Empirical CDF over ascending atoms (repeats allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    atoms: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyEcdf);
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite);
        }
        atoms.sort_by(f64::total_cmp);
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Number of atoms `<= t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.atoms.partition_point(|&a| a <= t)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.count_le(t) as f64 / self.len() as f64
    }

    pub fn median(&self) -> f64 {
        let m = self.len();
        if m % 2 == 1 {
            self.atoms[m / 2]
        } else {
            0.5 * (self.atoms[m / 2 - 1] + self.atoms[m / 2])
        }
    }
}

/// Pairwise dispersion of a set of responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub m: usize,
    /// `sum_{l<r} |y_l - y_r|`.
    pub w: f64,
    /// `d_k = sum_{l != k} |y_l - y_k|`, in input order.
    pub d: Vec<f64>,
}

impl DispersionStats {
    /// `sum_{l != r} |y_l - y_r| = 2W`.
    pub fn big_d(&self) -> f64 {
        2.0 * self.w
    }
}

/// `W` of ascending values via `sum_k (2k - m + 1) y_(k)`.
pub(crate) fn pairwise_sum_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(k, &y)| (2.0 * k as f64 - m + 1.0) * y)
        .sum::<f64>()
        .max(0.0)
}

/// Exact `W`, `D` and all `d_k` in O(m log m) from sorted prefix sums.
pub fn dispersion(ys: &[f64]) -> DispersionStats {
    let m = ys.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
    let total: f64 = ys.iter().sum();
    let mut d = vec![0.0; m];
    let mut below = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let y = ys[i];
        let above = total - below - y;
        let dk = y * k as f64 - below + above - y * (m - 1 - k) as f64;
        d[i] = dk.max(0.0);
        below += y;
    }
    let w = 0.5 * d.iter().sum::<f64>();
    DispersionStats { m, w, d }
}

/// CRPS of an ECDF at outcome `y`.
pub fn crps_ecdf(f: &Ecdf, y: f64) -> f64 {
    let m = f.len() as f64;
    let abs_dev: f64 = f.atoms.iter().map(|a| (a - y).abs()).sum();
    (abs_dev / m - pairwise_sum_sorted(&f.atoms) / (m * m)).max(0.0)
}

/// CRPS of observation `k` (0-based) against the ECDF of the other `m - 1`.
pub fn loo_crps_obs(stats: &DispersionStats, k: usize) -> Result<f64> {
    if stats.m < 2 {
        return Err(Error::BinTooSmall { m: stats.m, min: 2 });
    }
    let m1 = (stats.m - 1) as f64;
    let dk = stats.d[k];
    Ok(dk / m1 - (stats.big_d() - 2.0 * dk) / (2.0 * m1 * m1))
}

/// Total leave-one-out CRPS of a bin of `m` responses with dispersion `w`.
/// A singleton has no leave-one-out distribution; its cost is `+inf`.
pub fn bin_cost(m: usize, w: f64) -> f64 {
    if m < 2 {
        return f64::INFINITY;
    }
    let m1 = (m - 1) as f64;
    m as f64 * w / (m1 * m1)
}

/// `integral (F(t) - G(t))^2 dt` for two ECDFs, exact over merged breakpoints.
pub fn cramer_distance(f: &Ecdf, g: &Ecdf) -> f64 {
    let (mf, mg) = (f.len() as f64, g.len() as f64);
    let (a, b) = (f.atoms(), g.atoms());
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            let gap = i as f64 / mf - j as f64 / mg;
            total += gap * gap * (t - p);
        }
        while i < a.len() && a[i] == t {
            i += 1;
        }
        while j < b.len() && b[j] == t {
            j += 1;
        }
        prev = Some(t);
    }
    total
}
