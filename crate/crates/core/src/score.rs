//! Nonconformity scores for the conformal step.
//!
//! Each score is a [`NonconformityScore`] implementation registered by name in
//! a [`ScoreRegistry`], so callers (the CLI, the studies) pick one at runtime.
//! A score defines how unusual a candidate response `y_h` is relative to a
//! bin, and the leave-one-out score of every bin atom once `y_h` has joined
//! the bin. The conformal p-value ranks the candidate among those.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crps::{dispersion, DispersionStats, Ecdf};
use crate::{Error, Result};

/// Serializable name of a score and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreKind {
    Crps,
    Knn { k: usize },
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreKind::Crps => write!(f, "crps"),
            ScoreKind::Knn { k } => write!(f, "knn{k}"),
        }
    }
}

/// Responses of one bin with the summaries every score needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBin {
    ecdf: Ecdf,
    /// `d_k` aligned with the ascending atoms.
    stats: DispersionStats,
    prefix: Vec<f64>,
    /// Distance from each atom to its nearest other atom.
    nn: Vec<f64>,
}

impl ReferenceBin {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        let ecdf = Ecdf::new(atoms)?;
        let a = ecdf.atoms();
        let stats = dispersion(a);
        let mut prefix = Vec::with_capacity(a.len() + 1);
        prefix.push(0.0);
        for &y in a {
            prefix.push(prefix.last().unwrap() + y);
        }
        let nn = (0..a.len())
            .map(|j| {
                let left = (j > 0).then(|| a[j] - a[j - 1]);
                let right = a.get(j + 1).map(|r| r - a[j]);
                match (left, right) {
                    (Some(l), Some(r)) => l.min(r),
                    (Some(d), None) | (None, Some(d)) => d,
                    (None, None) => f64::INFINITY,
                }
            })
            .collect();
        Ok(Self {
            ecdf,
            stats,
            prefix,
            nn,
        })
    }

    pub fn m(&self) -> usize {
        self.ecdf.len()
    }

    /// Ascending atoms.
    pub fn atoms(&self) -> &[f64] {
        self.ecdf.atoms()
    }

    pub fn ecdf(&self) -> &Ecdf {
        &self.ecdf
    }

    pub fn stats(&self) -> &DispersionStats {
        &self.stats
    }

    pub fn min(&self) -> f64 {
        self.atoms()[0]
    }

    pub fn max(&self) -> f64 {
        self.atoms()[self.m() - 1]
    }

    /// `sum_i |y_i - y|` in O(log m).
    pub fn sum_abs_dev(&self, y: f64) -> f64 {
        let a = self.atoms();
        let below = a.partition_point(|&v| v <= y);
        let total = self.prefix[a.len()];
        let le = self.prefix[below];
        (y * below as f64 - le + (total - le) - y * (a.len() - below) as f64).max(0.0)
    }

    /// Distance from `y` to the nearest atom.
    pub fn nearest_distance(&self, y: f64) -> f64 {
        let a = self.atoms();
        let i = a.partition_point(|&v| v < y);
        let right = a.get(i).map_or(f64::INFINITY, |r| r - y);
        let left = if i > 0 { y - a[i - 1] } else { f64::INFINITY };
        left.min(right)
    }
}

/// A nonconformity score usable for conformal p-values.
pub trait NonconformityScore: Send + Sync + fmt::Debug {
    fn kind(&self) -> ScoreKind;

    /// Score of the candidate `y_h` against the bin.
    fn test_score(&self, bin: &ReferenceBin, y_h: f64) -> f64;

    /// Feeds `visit` the leave-one-out score of every atom within the bin
    /// augmented by `y_h`, and returns the candidate's own score computed
    /// the same way.
    fn augmented_scores(&self, bin: &ReferenceBin, y_h: f64, visit: &mut dyn FnMut(f64)) -> f64;

    /// Slack granted to `alpha_j >= alpha` when rounding can split ties that
    /// are exact in real arithmetic.
    fn tie_tolerance(&self, _bin: &ReferenceBin, _test: f64) -> f64 {
        0.0
    }

    /// Number of augmented scores (the candidate's included) that are at
    /// least the candidate's score.
    fn conforming_count(&self, bin: &ReferenceBin, y_h: f64) -> usize {
        let mut scores = Vec::with_capacity(bin.m());
        let test = self.augmented_scores(bin, y_h, &mut |s| scores.push(s));
        let threshold = test - self.tie_tolerance(bin, test);
        1 + scores.iter().filter(|&&s| s >= threshold).count()
    }

    /// `#{j : alpha_j(y_h) >= alpha(y_h)} / (m + 1)`.
    fn p_value(&self, bin: &ReferenceBin, y_h: f64) -> f64 {
        self.conforming_count(bin, y_h) as f64 / (bin.m() + 1) as f64
    }
}

/// CRPS of the bin ECDF at the candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrpsScore;

impl NonconformityScore for CrpsScore {
    fn kind(&self) -> ScoreKind {
        ScoreKind::Crps
    }

    fn test_score(&self, bin: &ReferenceBin, y_h: f64) -> f64 {
        crate::crps::crps_ecdf(bin.ecdf(), y_h)
    }

    fn augmented_scores(&self, bin: &ReferenceBin, y_h: f64, visit: &mut dyn FnMut(f64)) -> f64 {
        // Each leave-one-out set has m atoms. With d_j^A the absolute
        // deviations of atom j within the augmented set and W_A its pairwise
        // sum, alpha_j = d_j^A / m - (W_A - d_j^A) / m^2.
        let m = bin.m() as f64;
        let m2 = m * m;
        let dev_h = bin.sum_abs_dev(y_h);
        let w_aug = bin.stats().w + dev_h;
        for (&y, &d) in bin.atoms().iter().zip(&bin.stats().d) {
            let dj = d + (y - y_h).abs();
            visit(dj / m - (w_aug - dj) / m2);
        }
        dev_h / m - (w_aug - dev_h) / m2
    }

    fn tie_tolerance(&self, bin: &ReferenceBin, test: f64) -> f64 {
        let spread = (bin.max() - bin.min())
            .abs()
            .max(bin.max().abs())
            .max(bin.min().abs());
        1e-12 * (spread + test.abs())
    }
}

/// Distance to the k-th nearest atom. Only `k = 1` has a leave-one-out form.
#[derive(Debug, Clone, Copy)]
pub struct KnnScore {
    k: usize,
}

impl KnnScore {
    pub fn new(k: usize) -> Result<Self> {
        if k != 1 {
            return Err(Error::KOutOfRange { k, m: 0 });
        }
        Ok(Self { k })
    }
}

impl NonconformityScore for KnnScore {
    fn kind(&self) -> ScoreKind {
        ScoreKind::Knn { k: self.k }
    }

    fn test_score(&self, bin: &ReferenceBin, y_h: f64) -> f64 {
        bin.nearest_distance(y_h)
    }

    fn augmented_scores(&self, bin: &ReferenceBin, y_h: f64, visit: &mut dyn FnMut(f64)) -> f64 {
        for (&y, &nn) in bin.atoms().iter().zip(&bin.nn) {
            visit(nn.min((y - y_h).abs()));
        }
        bin.nearest_distance(y_h)
    }
}

/// `k`-th smallest `|y_h - y_i|` over the atoms.
pub fn knn_score(atoms: &[f64], y_h: f64, k: usize) -> Result<f64> {
    if k == 0 || k > atoms.len() {
        return Err(Error::KOutOfRange { k, m: atoms.len() });
    }
    let mut d: Vec<f64> = atoms.iter().map(|a| (a - y_h).abs()).collect();
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Parameters a score factory may consult.
#[derive(Debug, Clone, Copy)]
pub struct ScoreParams {
    pub k: usize,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { k: 1 }
    }
}

type ScoreFactory = fn(&ScoreParams) -> Result<Box<dyn NonconformityScore>>;

struct ScoreEntry {
    name: &'static str,
    summary: &'static str,
    factory: ScoreFactory,
}

/// Named score constructors.
pub struct ScoreRegistry {
    entries: Vec<ScoreEntry>,
}

impl ScoreRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// `crps` and `knn`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(
            "crps",
            "CRPS of the bin ECDF (convex, one interval)",
            |_| Ok(Box::new(CrpsScore)),
        );
        reg.register(
            "knn",
            "k-nearest-atom distance (k = 1; may split into intervals)",
            |p| Ok(Box::new(KnnScore::new(p.k)?)),
        );
        reg
    }

    /// Adds or replaces a score under `name`.
    pub fn register(&mut self, name: &'static str, summary: &'static str, factory: ScoreFactory) {
        self.entries.retain(|e| e.name != name);
        self.entries.push(ScoreEntry {
            name,
            summary,
            factory,
        });
    }

    pub fn names(&self) -> impl Iterator<Item = (&'static str, &'static str)> + '_ {
        self.entries.iter().map(|e| (e.name, e.summary))
    }

    pub fn create(&self, name: &str, params: &ScoreParams) -> Result<Box<dyn NonconformityScore>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownScore(name.to_string()))?;
        (entry.factory)(params)
    }

    pub fn create_kind(&self, kind: ScoreKind) -> Result<Box<dyn NonconformityScore>> {
        match kind {
            ScoreKind::Crps => self.create("crps", &ScoreParams::default()),
            ScoreKind::Knn { k } => self.create("knn", &ScoreParams { k }),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::crps::crps_ecdf;

    fn bin(a: &[f64]) -> ReferenceBin {
        ReferenceBin::new(a.to_vec()).unwrap()
    }

    /// Leave-one-out scores by building every augmented ECDF explicitly.
    fn crps_scores_by_hand(atoms: &[f64], y_h: f64) -> (Vec<f64>, f64) {
        let mut aug = atoms.to_vec();
        aug.push(y_h);
        let loo = |j: usize| {
            let rest: Vec<f64> = aug
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &v)| v)
                .collect();
            crps_ecdf(&Ecdf::new(rest).unwrap(), aug[j])
        };
        ((0..atoms.len()).map(loo).collect(), loo(atoms.len()))
    }

    #[test]
    fn crps_micro_examples() {
        let b = bin(&[0.0, 1.0]);
        let mut s = Vec::new();
        let t = CrpsScore.augmented_scores(&b, 0.5, &mut |v| s.push(v));
        assert_eq!((s.as_slice(), t), (&[0.625, 0.625][..], 0.25));
        assert_eq!(CrpsScore.p_value(&b, 0.5), 1.0);
        let mut s = Vec::new();
        let t = CrpsScore.augmented_scores(&b, 10.0, &mut |v| s.push(v));
        assert_eq!((s.as_slice(), t), (&[3.25, 2.5][..], 9.25));
        assert_eq!(CrpsScore.p_value(&b, 10.0), 1.0 / 3.0);
        assert_eq!(CrpsScore.test_score(&b, 10.0), 9.25);
    }

    #[test]
    fn knn_examples() {
        assert_eq!(knn_score(&[0.0, 10.0], 4.0, 1).unwrap(), 4.0);
        assert_eq!(knn_score(&[0.0, 10.0], 10.0, 1).unwrap(), 0.0);
        assert_eq!(knn_score(&[0.0, 1.0, 10.0], 2.0, 2).unwrap(), 2.0);
        assert!(matches!(
            knn_score(&[0.0, 1.0], 2.0, 3),
            Err(Error::KOutOfRange { .. })
        ));
        assert!(matches!(
            knn_score(&[0.0], 2.0, 0),
            Err(Error::KOutOfRange { .. })
        ));
        let b = bin(&[0.0, 10.0]);
        assert_eq!(KnnScore::new(1).unwrap().test_score(&b, 4.0), 4.0);
        assert!(KnnScore::new(2).is_err());
    }

    #[test]
    fn registry_lookup() {
        let reg = ScoreRegistry::builtin();
        assert_eq!(
            reg.create("crps", &ScoreParams::default()).unwrap().kind(),
            ScoreKind::Crps
        );
        assert_eq!(
            reg.create("KNN", &ScoreParams { k: 1 }).unwrap().kind(),
            ScoreKind::Knn { k: 1 }
        );
        assert!(matches!(
            reg.create("density", &ScoreParams::default()),
            Err(Error::UnknownScore(_))
        ));
        assert!(reg.create_kind(ScoreKind::Knn { k: 3 }).is_err());
        let names: Vec<_> = reg.names().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["crps", "knn"]);
    }

    proptest! {
        #[test]
        fn crps_fast_path_matches_explicit_augmentation(
            atoms in prop::collection::vec(-10.0f64..10.0, 2..25),
            y_h in -15.0f64..15.0,
        ) {
            let b = bin(&atoms);
            let mut fast = Vec::new();
            let t = CrpsScore.augmented_scores(&b, y_h, &mut |v| fast.push(v));
            let mut sorted = atoms.clone();
            sorted.sort_by(f64::total_cmp);
            let (slow, t_slow) = crps_scores_by_hand(&sorted, y_h);
            prop_assert!((t - t_slow).abs() < 1e-9);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn knn_fast_path_matches_definition(
            atoms in prop::collection::vec(-10.0f64..10.0, 2..25),
            y_h in -15.0f64..15.0,
        ) {
            let b = bin(&atoms);
            let score = KnnScore::new(1).unwrap();
            let mut fast = Vec::new();
            let t = score.augmented_scores(&b, y_h, &mut |v| fast.push(v));
            prop_assert_eq!(t, knn_score(&atoms, y_h, 1).unwrap());
            for (j, &y) in b.atoms().iter().enumerate() {
                let others = b.atoms().iter().enumerate().filter(|&(i, _)| i != j);
                let expect = others
                    .map(|(_, &v)| (v - y).abs())
                    .fold((y - y_h).abs(), f64::min);
                prop_assert_eq!(fast[j], expect);
            }
        }

        #[test]
        fn sum_abs_dev_matches_scan(atoms in prop::collection::vec(-10.0f64..10.0, 1..40), y in -12.0f64..12.0) {
            let b = bin(&atoms);
            let scan: f64 = atoms.iter().map(|a| (a - y).abs()).sum();
            prop_assert!((b.sum_abs_dev(y) - scan).abs() < 1e-9);
        }

        #[test]
        fn p_value_on_grid_and_permutation_invariant(
            atoms in prop::collection::vec(-10.0f64..10.0, 2..30),
            y_h in -15.0f64..15.0,
        ) {
            let m = atoms.len();
            for score in [&CrpsScore as &dyn NonconformityScore, &KnnScore::new(1).unwrap()] {
                let p = score.p_value(&bin(&atoms), y_h);
                let count = p * (m + 1) as f64;
                prop_assert!((count - count.round()).abs() < 1e-9);
                prop_assert!(p >= 1.0 / (m + 1) as f64 && p <= 1.0);
                let mut rev = atoms.clone();
                rev.reverse();
                prop_assert_eq!(score.p_value(&bin(&rev), y_h), p);
            }
        }
    }
}
