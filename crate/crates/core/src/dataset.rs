//! Covariate-sorted datasets, splits and seeded synthetic generators.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Name of the generator behind every [`RngSeed`]. Streams are stable for a
/// given `rand_chacha` major version.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.9)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
}

impl Observation {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Observations in non-decreasing covariate order, at least two of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedDataset {
    obs: Vec<Observation>,
}

impl SortedDataset {
    /// Stable-sorts by `x`, so tied covariates keep their input order.
    pub fn new(mut obs: Vec<Observation>) -> Result<Self> {
        if obs.iter().any(|o| !o.x.is_finite() || !o.y.is_finite()) {
            return Err(Error::NonFinite);
        }
        if obs.len() < 2 {
            return Err(Error::DatasetTooSmall {
                needed: 2,
                got: obs.len(),
            });
        }
        obs.sort_by(|a, b| a.x.total_cmp(&b.x));
        Ok(Self { obs })
    }

    pub fn from_xy(xs: &[f64], ys: &[f64]) -> Result<Self> {
        assert_eq!(xs.len(), ys.len(), "x and y lengths differ");
        Self::new(
            xs.iter()
                .zip(ys)
                .map(|(&x, &y)| Observation::new(x, y))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn xs(&self) -> Vec<f64> {
        self.obs.iter().map(|o| o.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.obs.iter().map(|o| o.y).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: SortedDataset,
    pub test: SortedDataset,
}

/// Seed for the project's random generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed, e.g. one per replication.
    pub fn derive(self, stream: u64) -> RngSeed {
        // splitmix64 finaliser over the (seed, stream) pair
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Reads two named numeric columns from a comma-separated file with one header
/// row. Lines starting with `#` are skipped.
pub fn load_csv(path: impl AsRef<Path>, x_col: &str, y_col: &str) -> Result<SortedDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (xi, yi) = (column(x_col)?, column(y_col)?);

    let mut obs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::UnparseableCell {
                    line,
                    column: name.to_string(),
                    value: raw.to_string(),
                })
        };
        obs.push(Observation::new(cell(xi, x_col)?, cell(yi, y_col)?));
    }
    SortedDataset::new(obs)
}

/// Odd sorted ranks (1, 3, 5, ...) train; even ranks test.
pub fn alternating_split(ds: &SortedDataset) -> Result<SplitPair> {
    if ds.len() < 4 {
        return Err(Error::DatasetTooSmall {
            needed: 4,
            got: ds.len(),
        });
    }
    let pick = |parity: usize| -> Vec<Observation> {
        ds.obs.iter().skip(parity).step_by(2).copied().collect()
    };
    Ok(SplitPair {
        train: SortedDataset { obs: pick(0) },
        test: SortedDataset { obs: pick(1) },
    })
}

/// Uniformly random split into `floor(n/2)` training and `ceil(n/2)` held-out
/// observations.
pub fn random_half_split(ds: &SortedDataset, seed: RngSeed) -> Result<SplitPair> {
    if ds.len() < 4 {
        return Err(Error::DatasetTooSmall {
            needed: 4,
            got: ds.len(),
        });
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut seed.rng());
    let n_train = ds.len() / 2;
    let (train_idx, test_idx) = idx.split_at(n_train);
    let gather = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        // restore file order so tie handling matches a direct load
        ix.sort_unstable();
        SortedDataset::new(ix.iter().map(|&i| ds.obs[i]).collect())
    };
    Ok(SplitPair {
        train: gather(train_idx)?,
        test: gather(test_idx)?,
    })
}

/// `X ~ Uniform(0, 3)`, `Y | X = x ~ Normal(3x, (1 + x)^2)`, sorted by `x`.
pub fn gen_heteroscedastic(n: usize, seed: RngSeed) -> Result<SortedDataset> {
    if n < 2 {
        return Err(Error::DatasetTooSmall { needed: 2, got: n });
    }
    let mut rng = seed.rng();
    let obs = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..3.0);
            let z: f64 = StandardNormal.sample(&mut rng);
            Observation::new(x, 3.0 * x + (1.0 + x) * z)
        })
        .collect();
    SortedDataset::new(obs)
}

/// i.i.d. draws from `0.5 N(-3, 0.5^2) + 0.5 N(3, 0.5^2)`.
pub fn gen_bimodal(m: usize, seed: RngSeed) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = seed.rng();
    let left = Normal::new(-3.0, 0.5).expect("valid normal");
    let right = Normal::new(3.0, 0.5).expect("valid normal");
    Ok((0..m)
        .map(|_| {
            if rng.random_bool(0.5) {
                right.sample(&mut rng)
            } else {
                left.sample(&mut rng)
            }
        })
        .collect())
}
