//! Count and sum Fenwick trees over rank-compressed response values.
//!
//! The cost sweep inserts responses one at a time and, for each new value `v`,
//! needs the number of current values `<= v`, their sum, and the sum of the
//! values `> v`. Both trees are indexed by the 1-based rank of `v` in the fixed
//! value universe built by [`RankIndex::build`].

use std::cell::Cell;
use std::ops::{Add, AddAssign, Sub};

use crate::{Error, Result};

/// Ascending distinct values; rank of a value is its 1-based position.
#[derive(Debug, Clone, PartialEq)]
pub struct RankIndex {
    sorted_uniques: Vec<f64>,
}

impl RankIndex {
    pub fn build(ys: &[f64]) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::EmptyInput);
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut sorted_uniques = ys.to_vec();
        sorted_uniques.sort_by(f64::total_cmp);
        sorted_uniques.dedup();
        Ok(Self { sorted_uniques })
    }

    pub fn len(&self) -> usize {
        self.sorted_uniques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_uniques.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted_uniques
    }

    pub fn rank_of(&self, v: f64) -> Result<usize> {
        self.sorted_uniques
            .binary_search_by(|u| u.total_cmp(&v))
            .map(|i| i + 1)
            .map_err(|_| Error::ValueNotIndexed(v))
    }
}

/// Value type accumulated by the sum tree.
pub trait SumValue:
    Copy + Default + PartialOrd + AddAssign + Add<Output = Self> + Sub<Output = Self>
{
}

impl SumValue for f64 {}
impl SumValue for i128 {}

/// Paired count/sum Fenwick trees plus running totals.
///
/// Holds its own copy of the rank universe so rows of the cost sweep can own
/// independent instances.
#[derive(Debug, Clone)]
pub struct DualFenwick<S: SumValue = f64> {
    count_tree: Vec<u64>,
    sum_tree: Vec<S>,
    total_count: u64,
    total_sum: S,
    cells_touched: Cell<u64>,
}

/// Answer to a [`DualFenwick::rank_and_sums`] query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSums<S> {
    /// Number of inserted values `<= v`.
    pub rank: u64,
    /// Sum of inserted values `<= v`.
    pub sum_le: S,
    /// Sum of inserted values `> v`.
    pub sum_gt: S,
}

impl<S: SumValue> DualFenwick<S> {
    pub fn new(universe: usize) -> Self {
        Self {
            count_tree: vec![0; universe + 1],
            sum_tree: vec![S::default(); universe + 1],
            total_count: 0,
            total_sum: S::default(),
            cells_touched: Cell::new(0),
        }
    }

    pub fn universe(&self) -> usize {
        self.count_tree.len() - 1
    }

    /// Clears all counts without reallocating.
    pub fn reset(&mut self) {
        self.count_tree.fill(0);
        self.sum_tree.fill(S::default());
        self.total_count = 0;
        self.total_sum = S::default();
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn total_sum(&self) -> S {
        self.total_sum
    }

    /// Array cells visited by inserts and queries since construction.
    pub fn cells_touched(&self) -> u64 {
        self.cells_touched.get()
    }

    /// Adds `value` at 1-based `rank`.
    pub fn insert_rank(&mut self, rank: usize, value: S) {
        debug_assert!(rank >= 1 && rank <= self.universe());
        self.total_count += 1;
        self.total_sum += value;
        let mut i = rank;
        let mut touched = 0;
        while i < self.count_tree.len() {
            self.count_tree[i] += 1;
            self.sum_tree[i] += value;
            touched += 1;
            i += i & i.wrapping_neg();
        }
        self.cells_touched.set(self.cells_touched.get() + touched);
    }

    /// Count, sum of values at ranks `<= rank`, and the complementary sum.
    pub fn query_rank(&self, rank: usize) -> RankSums<S> {
        let mut count = 0;
        let mut sum = S::default();
        let mut i = rank.min(self.universe());
        let mut touched = 0;
        while i > 0 {
            count += self.count_tree[i];
            sum += self.sum_tree[i];
            touched += 1;
            i &= i - 1;
        }
        self.cells_touched.set(self.cells_touched.get() + touched);
        RankSums {
            rank: count,
            sum_le: sum,
            sum_gt: self.total_sum - sum,
        }
    }
}

impl DualFenwick<f64> {
    pub fn for_index(index: &RankIndex) -> Self {
        Self::new(index.len())
    }

    pub fn insert(&mut self, index: &RankIndex, v: f64) -> Result<()> {
        let r = index.rank_of(v)?;
        self.insert_rank(r, v);
        Ok(())
    }

    pub fn rank_and_sums(&self, index: &RankIndex, v: f64) -> Result<RankSums<f64>> {
        let r = index.rank_of(v)?;
        Ok(self.query_rank(r))
    }
}
