//! Fitted bin model, Venn bands, conformal p-values and prediction sets.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost_matrix::{CostMatrix, PrecomputeOptions};
use crate::crps::{bin_cost, crps_ecdf};
use crate::dataset::SortedDataset;
use crate::partition::{optimal_partition, Partition, DEFAULT_MIN_BIN};
use crate::score::{CrpsScore, NonconformityScore, ReferenceBin, ScoreKind};
use crate::{Error, Result, FORMAT_VERSION};

/// Bins of a partition expressed in covariate space.
///
/// Cut points are midpoints between the last covariate of one bin and the
/// first of the next. When a cut falls inside a run of equal covariates the
/// midpoint is that shared value, and points located there resolve left.
#[derive(Debug, Clone, PartialEq)]
pub struct BinLayout {
    pub ranges: Vec<Range<usize>>,
    pub x_boundaries: Vec<f64>,
}

impl BinLayout {
    pub fn from_partition(ds: &SortedDataset, p: &Partition) -> Self {
        let xs = ds.xs();
        let bounds = p.boundaries();
        let x_boundaries = bounds[1..bounds.len() - 1]
            .iter()
            .map(|&b| 0.5 * (xs[b - 1] + xs[b]))
            .collect();
        let ranges = p.bins().collect();
        Self {
            ranges,
            x_boundaries,
        }
    }

    pub fn locate(&self, x: f64) -> usize {
        locate_in(&self.x_boundaries, x)
    }
}

/// Bin index of `x` given ascending cut points: clamped at both ends, a value
/// equal to a cut point goes to the left bin.
pub fn locate_in(x_boundaries: &[f64], x: f64) -> usize {
    x_boundaries.partition_point(|&b| b < x)
}

/// Partition of a dataset with its per-bin reference distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    m_min: usize,
    x_boundaries: Vec<f64>,
    bins: Vec<ReferenceBin>,
}

/// On-disk form of a [`FittedModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct ModelFile {
    pub format_version: u32,
    pub m_min: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub x_boundaries: Vec<f64>,
    pub bins: Vec<Vec<f64>>,
}

impl FittedModel {
    /// Optimal `k`-bin model of the whole dataset.
    pub fn fit(
        ds: &SortedDataset,
        k: usize,
        m_min: usize,
        opts: &PrecomputeOptions,
    ) -> Result<Self> {
        let cm = CostMatrix::from_dataset(ds, opts)?;
        let p = optimal_partition(&cm, k, m_min)?;
        Self::from_partition(ds, &p, m_min)
    }

    /// [`FittedModel::fit`] with default options and `m_min = 2`.
    pub fn fit_default(ds: &SortedDataset, k: usize) -> Result<Self> {
        Self::fit(ds, k, DEFAULT_MIN_BIN, &PrecomputeOptions::default())
    }

    pub fn from_partition(ds: &SortedDataset, p: &Partition, m_min: usize) -> Result<Self> {
        let layout = BinLayout::from_partition(ds, p);
        let ys = ds.ys();
        let bins = layout
            .ranges
            .iter()
            .map(|r| ReferenceBin::new(ys[r.clone()].to_vec()))
            .collect::<Result<_>>()?;
        Ok(Self {
            m_min,
            x_boundaries: layout.x_boundaries,
            bins,
        })
    }

    pub fn k(&self) -> usize {
        self.bins.len()
    }

    pub fn m_min(&self) -> usize {
        self.m_min
    }

    pub fn x_boundaries(&self) -> &[f64] {
        &self.x_boundaries
    }

    pub fn bins(&self) -> &[ReferenceBin] {
        &self.bins
    }

    pub fn bin(&self, idx: usize) -> &ReferenceBin {
        &self.bins[idx]
    }

    pub fn bin_sizes(&self) -> Vec<usize> {
        self.bins.iter().map(ReferenceBin::m).collect()
    }

    /// Sum of leave-one-out bin costs.
    pub fn total_cost(&self) -> f64 {
        self.bins.iter().map(|b| bin_cost(b.m(), b.stats().w)).sum()
    }

    pub fn locate_bin(&self, x_star: f64) -> usize {
        locate_in(&self.x_boundaries, x_star)
    }

    pub fn bin_for(&self, x_star: f64) -> &ReferenceBin {
        &self.bins[self.locate_bin(x_star)]
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: FORMAT_VERSION,
            m_min: self.m_min,
            k: self.k(),
            x_boundaries: self.x_boundaries.clone(),
            bins: self.bins.iter().map(|b| b.atoms().to_vec()).collect(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.bins.len() != file.k || file.x_boundaries.len() + 1 != file.k {
            return Err(Error::ModelFormat(format!(
                "K = {} but {} bins and {} boundaries",
                file.k,
                file.bins.len(),
                file.x_boundaries.len()
            )));
        }
        if file.x_boundaries.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::ModelFormat("x_boundaries not ascending".into()));
        }
        let bins = file
            .bins
            .into_iter()
            .map(ReferenceBin::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(Self {
            m_min: file.m_min,
            x_boundaries: file.x_boundaries,
            bins,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Lower and upper Venn-band CDFs of a bin.
#[derive(Debug, Clone, PartialEq)]
pub struct VennBand {
    atoms: Vec<f64>,
}

impl VennBand {
    pub fn m(&self) -> usize {
        self.atoms.len()
    }

    pub fn width(&self) -> f64 {
        1.0 / (self.m() + 1) as f64
    }

    /// `k / (m + 1)` with `k` the number of atoms `<= t`.
    pub fn lower(&self, t: f64) -> f64 {
        self.atoms.partition_point(|&a| a <= t) as f64 / (self.m() + 1) as f64
    }

    pub fn upper(&self, t: f64) -> f64 {
        self.lower(t) + self.width()
    }
}

pub fn venn_band(atoms: &[f64]) -> Result<VennBand> {
    if atoms.is_empty() {
        return Err(Error::EmptyEcdf);
    }
    if atoms.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut atoms = atoms.to_vec();
    atoms.sort_by(f64::total_cmp);
    Ok(VennBand { atoms })
}

fn require_pair(bin: &ReferenceBin) -> Result<()> {
    if bin.m() < 2 {
        return Err(Error::BinTooSmall { m: bin.m(), min: 2 });
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    Ok(())
}

/// CRPS of the bin ECDF at `y_h`.
pub fn crps_score(bin: &ReferenceBin, y_h: f64) -> Result<f64> {
    require_pair(bin)?;
    Ok(crps_ecdf(bin.ecdf(), y_h))
}

/// Conformal p-value of `y_h` against the bin under `score`.
pub fn p_value(bin: &ReferenceBin, y_h: f64, score: &dyn NonconformityScore) -> Result<f64> {
    require_pair(bin)?;
    Ok(score.p_value(bin, y_h))
}

/// Both sides of `sum_j alpha_j(y_h) = (m + 1) / m^2 * W(augmented bin)` for
/// the CRPS score.
pub fn augmented_cost_identity(bin: &ReferenceBin, y_h: f64) -> Result<(f64, f64)> {
    require_pair(bin)?;
    let mut sum = 0.0;
    let test = CrpsScore.augmented_scores(bin, y_h, &mut |a| sum += a);
    let lhs = sum + test;
    let m = bin.m() as f64;
    let w_aug = bin.stats().w + bin.sum_abs_dev(y_h);
    Ok((lhs, (m + 1.0) / (m * m) * w_aug))
}

/// True when the smallest attainable p-value `1 / (m + 1)` already exceeds
/// `epsilon`, so every candidate is accepted.
pub fn granularity_floor_binds(m: usize, epsilon: f64) -> bool {
    (m + 1) as f64 * epsilon < 1.0
}

/// Grid and refinement settings for [`prediction_set`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub grid_points: usize,
    /// Padding on each side of the atoms, in units of the atom range.
    pub range_multiplier: f64,
    /// Bisection tolerance relative to the atom scale.
    pub tol_rel: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_points: 4096,
            range_multiplier: 1.0,
            tol_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub grid_points: usize,
    pub evaluations: usize,
    pub tolerance: f64,
    pub search_lo: f64,
    pub search_hi: f64,
}

/// `{y : p(y) > epsilon}` as disjoint ascending closed intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub intervals: Vec<Interval>,
    pub epsilon: f64,
    pub score_kind: ScoreKind,
    /// Every response is accepted; `intervals` then holds the search range.
    pub whole_line: bool,
    pub grid_info: GridInfo,
}

impl PredictionSet {
    /// Lebesgue measure, `None` for the whole line.
    pub fn measure(&self) -> Option<f64> {
        (!self.whole_line).then(|| self.intervals.iter().map(Interval::len).sum())
    }

    pub fn contains(&self, y: f64) -> bool {
        self.whole_line || self.intervals.iter().any(|iv| iv.contains(y))
    }

    pub fn is_empty(&self) -> bool {
        !self.whole_line && self.intervals.is_empty()
    }
}

/// Evaluates the acceptance rule `p(y) > epsilon` with an evaluation counter.
struct Acceptor<'a> {
    bin: &'a ReferenceBin,
    score: &'a dyn NonconformityScore,
    threshold: f64,
    evaluations: usize,
}

impl Acceptor<'_> {
    fn accepts(&mut self, y: f64) -> bool {
        self.evaluations += 1;
        self.score.conforming_count(self.bin, y) as f64 > self.threshold
    }

    /// Crossing between a rejected and an accepted point, returned on the
    /// accepted side.
    fn refine(&mut self, mut rejected: f64, mut accepted: f64, tol: f64) -> f64 {
        while (accepted - rejected).abs() > tol {
            let mid = 0.5 * (accepted + rejected);
            if mid == accepted || mid == rejected {
                break;
            }
            if self.accepts(mid) {
                accepted = mid;
            } else {
                rejected = mid;
            }
        }
        accepted
    }
}

pub fn prediction_set(
    bin: &ReferenceBin,
    epsilon: f64,
    score: &dyn NonconformityScore,
    search: &SearchConfig,
) -> Result<PredictionSet> {
    check_epsilon(epsilon)?;
    require_pair(bin)?;
    let m = bin.m();
    let (lo_atom, hi_atom) = (bin.min(), bin.max());
    let range = hi_atom - lo_atom;
    let scale = if range > 0.0 {
        range
    } else {
        lo_atom.abs().max(1.0)
    };
    let tol = search.tol_rel * scale;
    let pad = search.range_multiplier.max(f64::MIN_POSITIVE) * scale;
    let mut acc = Acceptor {
        bin,
        score,
        threshold: epsilon * (m + 1) as f64,
        evaluations: 0,
    };
    let info = |acc: &Acceptor, lo: f64, hi: f64| GridInfo {
        grid_points: search.grid_points,
        evaluations: acc.evaluations,
        tolerance: tol,
        search_lo: lo,
        search_hi: hi,
    };

    if granularity_floor_binds(m, epsilon) {
        let (lo, hi) = (lo_atom - pad, hi_atom + pad);
        return Ok(PredictionSet {
            intervals: vec![Interval { lo, hi }],
            epsilon,
            score_kind: score.kind(),
            whole_line: true,
            grid_info: info(&acc, lo, hi),
        });
    }

    let (mut pad_lo, mut pad_hi) = (pad, pad);
    for _ in 0..64 {
        if !acc.accepts(lo_atom - pad_lo) {
            break;
        }
        pad_lo *= 2.0;
    }
    for _ in 0..64 {
        if !acc.accepts(hi_atom + pad_hi) {
            break;
        }
        pad_hi *= 2.0;
    }
    let (lo, hi) = (lo_atom - pad_lo, hi_atom + pad_hi);

    let steps = search.grid_points.max(2) - 1;
    let mut grid: Vec<f64> = (0..=steps)
        .map(|s| lo + (hi - lo) * s as f64 / steps as f64)
        .collect();
    let atoms = bin.atoms();
    grid.extend_from_slice(atoms);
    grid.extend(atoms.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let accepted: Vec<bool> = grid.iter().map(|&y| acc.accepts(y)).collect();

    let mut intervals = Vec::new();
    let mut t = 0;
    while t < grid.len() {
        if !accepted[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t + 1 < grid.len() && accepted[t + 1] {
            t += 1;
        }
        let left = if start == 0 {
            grid[0]
        } else {
            acc.refine(grid[start - 1], grid[start], tol)
        };
        let right = if t + 1 == grid.len() {
            grid[t]
        } else {
            acc.refine(grid[t + 1], grid[t], tol)
        };
        intervals.push(Interval {
            lo: left,
            hi: right,
        });
        t += 1;
    }

    Ok(PredictionSet {
        intervals,
        epsilon,
        score_kind: score.kind(),
        whole_line: false,
        grid_info: info(&acc, lo, hi),
    })
}

/// `(y, p(y))` over an even grid, for p-value plots.
pub fn p_curve(
    bin: &ReferenceBin,
    score: &dyn NonconformityScore,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    require_pair(bin)?;
    let steps = points.max(2) - 1;
    Ok((0..=steps)
        .map(|s| {
            let y = lo + (hi - lo) * s as f64 / steps as f64;
            (y, score.p_value(bin, y))
        })
        .collect())
}
