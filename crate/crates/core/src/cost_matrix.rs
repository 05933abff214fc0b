//! Leave-one-out CRPS cost of every contiguous window of the sorted responses.
//!
//! Row `i` fixes the left endpoint and sweeps `j = i..n`, growing the window
//! one response at a time. The pairwise dispersion `W(i, j)` is updated from
//! a rank/sum query against the values already in the window, so a row costs
//! O(n log n) and the whole table O(n^2 log n).

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::crps::bin_cost;
use crate::dataset::{RngSeed, SortedDataset};
use crate::fenwick::{DualFenwick, RankIndex, SumValue};
use crate::{Error, Result};

/// Magic bytes opening a binary cost-matrix dump.
pub const DUMP_MAGIC: &[u8; 8] = b"CRPSCM01";

/// Default memory cap for the cost table: 2 GiB.
pub const DEFAULT_MEM_CAP: u64 = 2 << 30;

#[derive(Debug, Clone, Copy)]
pub struct PrecomputeOptions {
    /// Accumulate in integer-scaled fixed point instead of `f64`.
    pub exact: bool,
    /// Also keep the `W(i, j)` table.
    pub keep_w: bool,
    pub mem_cap: u64,
}

impl Default for PrecomputeOptions {
    fn default() -> Self {
        Self {
            exact: false,
            keep_w: false,
            mem_cap: DEFAULT_MEM_CAP,
        }
    }
}

/// Upper-triangular cost table in a flat row-major layout. Indices are
/// 0-based and inclusive: `get(i, j)` is the cost of the bin `i..=j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    c: Vec<f64>,
    w: Option<Vec<f64>>,
}

fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl CostMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize) -> usize {
        // rows before i hold n + (n-1) + ... + (n-i+1) entries
        i * self.n - i * (i.saturating_sub(1)) / 2
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j && j < self.n);
        self.c[self.offset(i) + (j - i)]
    }

    /// Costs `c(i, i..n)`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = self.offset(i);
        &self.c[start..start + (self.n - i)]
    }

    /// `W(i, j)` when the table was kept.
    pub fn w(&self, i: usize, j: usize) -> Option<f64> {
        self.w.as_ref().map(|w| w[self.offset(i) + (j - i)])
    }

    /// Largest finite entry, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.c
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }

    /// Builds a matrix directly from entries, e.g. for oracle tests on
    /// synthetic costs. `cost(i, j)` is only called for `i < j`.
    pub fn from_fn(n: usize, mut cost: impl FnMut(usize, usize) -> f64) -> Self {
        let mut c = Vec::with_capacity(tri_len(n));
        for i in 0..n {
            c.push(f64::INFINITY);
            c.extend((i + 1..n).map(|j| cost(i, j)));
        }
        Self { n, c, w: None }
    }

    /// Little-endian dump: magic, `n` as `u64`, then the upper triangle row
    /// by row (diagonal included).
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.c {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[..8] != DUMP_MAGIC {
            return Err(Error::ModelFormat("bad cost-matrix magic".into()));
        }
        let n = u64::from_le_bytes(header[8..].try_into().expect("8 bytes")) as usize;
        let mut c = Vec::with_capacity(tri_len(n));
        let mut buf = [0u8; 8];
        for _ in 0..tri_len(n) {
            input.read_exact(&mut buf)?;
            c.push(f64::from_le_bytes(buf));
        }
        Ok(Self { n, c, w: None })
    }
}

/// Bytes needed for the cost table (and the `W` table if kept).
pub fn required_bytes(n: usize, keep_w: bool) -> u64 {
    let tables = if keep_w { 2 } else { 1 };
    (tri_len(n) as u64) * 8 * tables
}

/// Integer scale `2^k` putting `max |y| * 2^k` just under `2^53`.
fn fixed_point_scale(ys: &[f64]) -> f64 {
    let max = ys.iter().fold(0.0f64, |a, y| a.max(y.abs()));
    if max == 0.0 {
        return 1.0;
    }
    let k = 52 - max.log2().ceil() as i32;
    2f64.powi(k.clamp(-1000, 1000))
}

/// Sweeps one row: `out_c[j - i]` and optionally `out_w[j - i]` for `j >= i`.
fn sweep_row<S: SumValue>(
    i: usize,
    ranks: &[usize],
    values: &[S],
    tree: &mut DualFenwick<S>,
    mul: impl Fn(S, u64) -> S,
    to_f64: impl Fn(S) -> f64,
    out_c: &mut [f64],
    mut out_w: Option<&mut [f64]>,
) {
    tree.reset();
    let mut w = S::default();
    for (off, j) in (i..ranks.len()).enumerate() {
        let y = values[j];
        tree.insert_rank(ranks[j], y);
        let q = tree.query_rank(ranks[j]);
        let m = (off + 1) as u64;
        // sum_{l in window} |y_l - y_j|; y_j itself contributes zero
        let added = mul(y, q.rank) - q.sum_le + q.sum_gt - mul(y, m - q.rank);
        if added > S::default() {
            w += added;
        }
        let wf = to_f64(w);
        out_c[off] = bin_cost(off + 1, wf);
        if let Some(ow) = out_w.as_deref_mut() {
            ow[off] = wf;
        }
    }
}

/// Splits a flat triangle buffer into per-row mutable slices.
fn row_slices(buf: &mut [f64], n: usize) -> Vec<&mut [f64]> {
    let mut rows = Vec::with_capacity(n);
    let mut rest = buf;
    for i in 0..n {
        let (row, tail) = rest.split_at_mut(n - i);
        rows.push(row);
        rest = tail;
    }
    rows
}

/// All-window costs for responses given in covariate order. Rows are filled in
/// parallel on the current rayon pool.
pub fn precompute(ys: &[f64], opts: &PrecomputeOptions) -> Result<CostMatrix> {
    let n = ys.len();
    if n < 2 {
        return Err(Error::DatasetTooSmall { needed: 2, got: n });
    }
    let bytes = required_bytes(n, opts.keep_w);
    if bytes > opts.mem_cap {
        return Err(Error::CapacityExceeded {
            n,
            bytes,
            cap: opts.mem_cap,
        });
    }
    // W is translation invariant; centring keeps the running sums small and
    // makes constant windows exactly zero
    let (lo, hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| {
            (a.min(y), b.max(y))
        });
    let center = 0.5 * lo + 0.5 * hi;
    let centred: Vec<f64> = ys.iter().map(|&y| y - center).collect();
    let ys = &centred[..];
    let index = RankIndex::build(ys)?;
    let ranks: Vec<usize> = ys
        .iter()
        .map(|&y| index.rank_of(y))
        .collect::<Result<_>>()?;
    let universe = index.len();

    let mut c = vec![0.0; tri_len(n)];
    let mut w = opts.keep_w.then(|| vec![0.0; tri_len(n)]);
    let c_rows = row_slices(&mut c, n);
    let w_rows: Vec<Option<&mut [f64]>> = match w.as_mut() {
        Some(buf) => row_slices(buf, n).into_iter().map(Some).collect(),
        None => (0..n).map(|_| None).collect(),
    };
    let jobs = c_rows.into_par_iter().zip(w_rows).enumerate();

    if opts.exact {
        let scale = fixed_point_scale(ys);
        let values: Vec<i128> = ys.iter().map(|&y| (y * scale).round() as i128).collect();
        jobs.for_each_init(
            || DualFenwick::<i128>::new(universe),
            |tree, (i, (row_c, row_w))| {
                sweep_row(
                    i,
                    &ranks,
                    &values,
                    tree,
                    |v, k| v * k as i128,
                    |s| s as f64 / scale,
                    row_c,
                    row_w,
                )
            },
        );
    } else {
        jobs.for_each_init(
            || DualFenwick::<f64>::new(universe),
            |tree, (i, (row_c, row_w))| {
                sweep_row(
                    i,
                    &ranks,
                    ys,
                    tree,
                    |v, k| v * k as f64,
                    |s| s.max(0.0),
                    row_c,
                    row_w,
                )
            },
        );
    }
    Ok(CostMatrix { n, c, w })
}

impl CostMatrix {
    pub fn from_dataset(ds: &SortedDataset, opts: &PrecomputeOptions) -> Result<Self> {
        precompute(&ds.ys(), opts)
    }
}

/// Double-loop `sum_{l<r} |y_l - y_r|` over the 0-based inclusive window `i..=j`.
pub fn naive_w(ys: &[f64], i: usize, j: usize) -> Result<f64> {
    if i > j || j >= ys.len() {
        return Err(Error::IndexOutOfRange { i, j, n: ys.len() });
    }
    let mut w = 0.0;
    for l in i..=j {
        for r in l + 1..=j {
            w += (ys[l] - ys[r]).abs();
        }
    }
    Ok(w)
}

/// A quadruple `a <= b <= c <= d` with `c(a,c) + c(b,d) > c(a,d) + c(b,c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrangleViolation {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
    /// Left side minus right side.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrangleReport {
    pub exhaustive: bool,
    pub checked: u64,
    pub violation_count: u64,
    /// First `max_reports` violations found.
    pub violations: Vec<QuadrangleViolation>,
    pub tolerance: f64,
}

/// Largest `n` probed exhaustively; above it quadruples are sampled.
pub const QUADRANGLE_EXHAUSTIVE_MAX: usize = 60;

/// Measures how often the quadrangle inequality fails on finite entries.
/// Purely diagnostic; the DP never relies on it.
pub fn check_quadrangle(
    cm: &CostMatrix,
    max_reports: usize,
    samples: u64,
    seed: RngSeed,
) -> QuadrangleReport {
    let n = cm.n();
    let tolerance = 1e-9 * cm.scale().max(1.0);
    let mut report = QuadrangleReport {
        exhaustive: n <= QUADRANGLE_EXHAUSTIVE_MAX,
        checked: 0,
        violation_count: 0,
        violations: Vec::new(),
        tolerance,
    };
    let probe = |a: usize, b: usize, c: usize, d: usize, report: &mut QuadrangleReport| {
        // every entry must be off-diagonal to be finite
        if a >= c || b >= c || b >= d {
            return;
        }
        report.checked += 1;
        let gap = cm.get(a, c) + cm.get(b, d) - cm.get(a, d) - cm.get(b, c);
        if gap > tolerance {
            report.violation_count += 1;
            if report.violations.len() < max_reports {
                report
                    .violations
                    .push(QuadrangleViolation { a, b, c, d, gap });
            }
        }
    };
    if report.exhaustive {
        for a in 0..n {
            for b in a..n {
                for c in b..n {
                    for d in c..n {
                        probe(a, b, c, d, &mut report);
                    }
                }
            }
        }
    } else {
        let mut rng = seed.rng();
        for _ in 0..samples {
            let mut q = [0usize; 4];
            for v in &mut q {
                *v = rng.random_range(0..n);
            }
            q.sort_unstable();
            probe(q[0], q[1], q[2], q[3], &mut report);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;

    fn random_ys(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
    }

    #[test]
    fn small_example() {
        let cm = precompute(&[0.0, 1.0, 2.0], &PrecomputeOptions::default()).unwrap();
        assert_eq!(cm.get(0, 1), 2.0);
        assert_eq!(cm.get(1, 2), 2.0);
        assert_eq!(cm.get(0, 2), 3.0);
        for i in 0..3 {
            assert_eq!(cm.get(i, i), f64::INFINITY);
        }
    }

    #[test]
    fn constant_responses_cost_nothing() {
        let cm = precompute(&[4.2; 9], &PrecomputeOptions::default()).unwrap();
        for i in 0..9 {
            for j in i + 1..9 {
                assert_eq!(cm.get(i, j), 0.0);
            }
        }
        let report = check_quadrangle(&cm, 10, 0, RngSeed(0));
        assert_eq!(report.violation_count, 0);
        assert!(report.checked > 0);
    }

    #[test]
    fn matches_naive_oracle() {
        let ys = random_ys(200, 7);
        let opts = PrecomputeOptions {
            keep_w: true,
            ..Default::default()
        };
        let cm = precompute(&ys, &opts).unwrap();
        for i in 0..ys.len() {
            for j in i + 1..ys.len() {
                let w = naive_w(&ys, i, j).unwrap();
                let expect = bin_cost(j - i + 1, w);
                let got = cm.get(i, j);
                assert!(
                    (got - expect).abs() <= 1e-8 * expect.max(1e-300),
                    "({i},{j})"
                );
                assert!((cm.w(i, j).unwrap() - w).abs() <= 1e-8 * w.max(1e-300));
            }
        }
    }

    #[test]
    fn exact_mode_on_integers() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ys: Vec<f64> = (0..80)
            .map(|_| f64::from(rng.random_range(-1000i32..1000)))
            .collect();
        let opts = PrecomputeOptions {
            exact: true,
            keep_w: true,
            ..Default::default()
        };
        let cm = precompute(&ys, &opts).unwrap();
        for i in 0..ys.len() {
            for j in i..ys.len() {
                assert_eq!(cm.w(i, j).unwrap(), naive_w(&ys, i, j).unwrap());
            }
        }
    }

    #[test]
    fn naive_w_examples() {
        assert_eq!(naive_w(&[0.0, 1.0, 2.0], 0, 2).unwrap(), 4.0);
        assert_eq!(naive_w(&[0.0, 1.0, 2.0], 1, 1).unwrap(), 0.0);
        assert_eq!(naive_w(&[5.0, 5.0], 0, 1).unwrap(), 0.0);
        assert!(matches!(
            naive_w(&[1.0, 2.0], 0, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn memory_cap_is_enforced() {
        let opts = PrecomputeOptions {
            mem_cap: 1024,
            ..Default::default()
        };
        assert!(matches!(
            precompute(&random_ys(100, 1), &opts),
            Err(Error::CapacityExceeded { n: 100, .. })
        ));
    }

    #[test]
    fn degenerate_quadruples_never_violate() {
        let cm = precompute(&random_ys(25, 2), &PrecomputeOptions::default()).unwrap();
        let report = check_quadrangle(&cm, usize::MAX, 0, RngSeed(0));
        assert!(report.exhaustive);
        assert!(report
            .violations
            .iter()
            .all(|v| v.a < v.b && v.c < v.d && v.gap > 0.0));
    }

    #[test]
    fn sampled_probe_above_exhaustive_limit() {
        let cm = precompute(&random_ys(90, 5), &PrecomputeOptions::default()).unwrap();
        let report = check_quadrangle(&cm, 3, 5000, RngSeed(1));
        assert!(!report.exhaustive);
        assert!(report.checked > 0 && report.checked <= 5000);
        assert!(report.violations.len() <= 3);
    }

    #[test]
    fn dump_round_trip() {
        let cm = precompute(&random_ys(17, 9), &PrecomputeOptions::default()).unwrap();
        let mut buf = Vec::new();
        cm.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], DUMP_MAGIC);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 17);
        assert_eq!(buf.len(), 16 + 8 * 17 * 18 / 2);
        assert_eq!(CostMatrix::read_from(&buf[..]).unwrap(), cm);
        assert!(CostMatrix::read_from(&b"NOTMAGIC\0\0\0\0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn row_order_independent() {
        let ys = random_ys(60, 11);
        let par = precompute(&ys, &PrecomputeOptions::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let seq = pool.install(|| precompute(&ys, &PrecomputeOptions::default()).unwrap());
        assert_eq!(par, seq);
        // a row swept on its own matches the same row of the full table
        for i in 0..ys.len() - 1 {
            let single = precompute(&ys[i..], &PrecomputeOptions::default()).unwrap();
            for (a, b) in single.row(0).iter().zip(par.row(i)) {
                assert!(a == b || (a - b).abs() <= 1e-10 * b.abs());
            }
        }
    }

    proptest! {
        #[test]
        fn dispersion_grows_with_window(ys in prop::collection::vec(-10.0f64..10.0, 2..40)) {
            let opts = PrecomputeOptions { keep_w: true, ..Default::default() };
            let cm = precompute(&ys, &opts).unwrap();
            for i in 0..ys.len() {
                for j in i..ys.len() - 1 {
                    prop_assert!(cm.w(i, j).unwrap() <= cm.w(i, j + 1).unwrap());
                }
            }
        }
    }
}
