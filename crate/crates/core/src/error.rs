use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("column `{column}` not found in {}", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("line {line}, column `{column}`: cannot parse {value:?} as a finite number")]
    UnparseableCell {
        line: u64,
        column: String,
        value: String,
    },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("dataset too small: need at least {needed} observations, got {got}")]
    DatasetTooSmall { needed: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("value {0} is not in the rank index")]
    ValueNotIndexed(f64),
    #[error("empirical CDF has no atoms")]
    EmptyEcdf,
    #[error("bin of size {m} is too small (need at least {min})")]
    BinTooSmall { m: usize, min: usize },
    #[error("index range ({i}, {j}) out of bounds for n = {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("cost matrix for n = {n} needs {bytes} bytes, above the memory cap of {cap} bytes")]
    CapacityExceeded { n: usize, bytes: u64, cap: u64 },
    #[error(
        "K = {k} is infeasible for n = {n} with minimum bin size {m_min} (need K * m_min <= n)"
    )]
    InfeasibleK { k: usize, n: usize, m_min: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("exhaustive oracle limited to n <= {max}, got {n}")]
    OracleTooLarge { n: usize, max: usize },
    #[error("invalid partition: {0}")]
    InvalidBoundaries(String),
    #[error("test set is empty")]
    EmptyTest,
    #[error("no feasible K in 1..={k_max}")]
    AllKInfeasible { k_max: usize },
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("k = {k} out of range for a bin of {m} atoms")]
    KOutOfRange { k: usize, m: usize },
    #[error("all covariate values are equal; regression line undefined")]
    DegenerateX,
    #[error("unknown nonconformity score `{0}`")]
    UnknownScore(String),
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("model format: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
