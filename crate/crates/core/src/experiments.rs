//! Coverage studies and benchmark tables.
//!
//! Each study is a [`Study`] registered by name in a [`StudyRegistry`]; the
//! CLI's `reproduce` command looks studies up there. A run yields result rows
//! (one per method and level) plus a JSON summary with the run metadata.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::baseline::{calibrate, ols_fit, predict_interval};
use crate::conformal::{prediction_set, FittedModel, PredictionSet, SearchConfig};
use crate::cost_matrix::PrecomputeOptions;
use crate::dataset::{
    gen_bimodal, gen_heteroscedastic, load_csv, random_half_split, RngSeed, SortedDataset, RNG_NAME,
};
use crate::partition::DEFAULT_MIN_BIN;
use crate::score::{CrpsScore, KnnScore, NonconformityScore, ReferenceBin, ScoreKind};
use crate::select::{format_real, select_k, SelectOptions, Selection};
use crate::{Error, Result, FORMAT_VERSION};

/// Output of `git describe` for the build, or `unknown`.
pub const GIT_DESCRIBE: &str = env!("CRPSBIN_GIT_DESCRIBE");

/// Method names of benchmark rows kept as empty placeholders.
pub const PLACEHOLDER_METHODS: [&str; 2] = ["CQR (cubic)", "CQR-QRF"];

/// Coverage and set size of one method at one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub method: String,
    pub epsilon: f64,
    /// Whole-line sets count as covered.
    pub coverage: f64,
    /// Mean Lebesgue measure over sets that are not the whole line; `NaN`
    /// when there are none.
    pub mean_measure: f64,
    pub se_coverage: f64,
    pub se_measure: f64,
    /// Test points per replication (summed when sizes differ).
    pub n_test: usize,
    pub replications: usize,
    pub n_wholeline: usize,
}

/// Per-replication outcome before aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub covered: usize,
    pub n_test: usize,
    pub measure_sum: f64,
    pub measure_sq_sum: f64,
    pub n_wholeline: usize,
}

impl Outcome {
    fn push(&mut self, covered: bool, measure: Option<f64>) {
        self.n_test += 1;
        self.covered += usize::from(covered);
        match measure {
            Some(v) => {
                self.measure_sum += v;
                self.measure_sq_sum += v * v;
            }
            None => self.n_wholeline += 1,
        }
    }

    fn empty() -> Self {
        Self {
            covered: 0,
            n_test: 0,
            measure_sum: 0.0,
            measure_sq_sum: 0.0,
            n_wholeline: 0,
        }
    }

    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.n_test as f64
    }

    pub fn mean_measure(&self) -> Option<f64> {
        let k = self.n_test - self.n_wholeline;
        (k > 0).then(|| self.measure_sum / k as f64)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Averages replications. With a single replication the coverage error is
/// binomial and the measure error is the per-point standard error.
pub fn aggregate(method: &str, epsilon: f64, reps: &[Outcome]) -> CoverageReport {
    let n_wholeline = reps.iter().map(|o| o.n_wholeline).sum();
    let n_test = reps.iter().map(|o| o.n_test).max().unwrap_or(0);
    if let [one] = reps {
        let c = one.coverage();
        let k = (one.n_test - one.n_wholeline) as f64;
        let (mean_measure, se_measure) = match one.mean_measure() {
            Some(mean) if k >= 2.0 => {
                let var = ((one.measure_sq_sum - k * mean * mean) / (k - 1.0)).max(0.0);
                (mean, (var / k).sqrt())
            }
            Some(mean) => (mean, f64::NAN),
            None => (f64::NAN, f64::NAN),
        };
        return CoverageReport {
            method: method.to_string(),
            epsilon,
            coverage: c,
            mean_measure,
            se_coverage: (c * (1.0 - c) / one.n_test as f64).sqrt(),
            se_measure,
            n_test,
            replications: 1,
            n_wholeline,
        };
    }
    let covs: Vec<f64> = reps.iter().map(Outcome::coverage).collect();
    let measures: Vec<f64> = reps.iter().filter_map(Outcome::mean_measure).collect();
    let (coverage, se_coverage) = mean_and_se(&covs);
    let (mean_measure, se_measure) = mean_and_se(&measures);
    CoverageReport {
        method: method.to_string(),
        epsilon,
        coverage,
        mean_measure,
        se_coverage,
        se_measure,
        n_test,
        replications: reps.len(),
        n_wholeline,
    }
}

/// Prediction sets of a model, built once per bin.
pub struct SetCache<'a> {
    model: &'a FittedModel,
    sets: Vec<PredictionSet>,
}

impl<'a> SetCache<'a> {
    pub fn new(
        model: &'a FittedModel,
        epsilon: f64,
        score: &dyn NonconformityScore,
        search: &SearchConfig,
    ) -> Result<Self> {
        let sets = model
            .bins()
            .par_iter()
            .map(|b| prediction_set(b, epsilon, score, search))
            .collect::<Result<_>>()?;
        Ok(Self { model, sets })
    }

    pub fn set_for(&self, x_star: f64) -> &PredictionSet {
        &self.sets[self.model.locate_bin(x_star)]
    }

    pub fn sets(&self) -> &[PredictionSet] {
        &self.sets
    }
}

fn outcome_on(cache: &SetCache, test: &SortedDataset) -> Outcome {
    let mut out = Outcome::empty();
    for o in test.observations() {
        let s = cache.set_for(o.x);
        out.push(s.contains(o.y), s.measure());
    }
    out
}

/// Coverage of the model's prediction sets on a test set.
pub fn coverage_eval(
    model: &FittedModel,
    test: &SortedDataset,
    epsilon: f64,
    score: &dyn NonconformityScore,
    search: &SearchConfig,
) -> Result<CoverageReport> {
    if test.is_empty() {
        return Err(Error::EmptyTest);
    }
    let cache = SetCache::new(model, epsilon, score, search)?;
    let name = score.kind().to_string();
    Ok(aggregate(&name, epsilon, &[outcome_on(&cache, test)]))
}

/// Settings shared by all studies.
#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub seed: u64,
    /// Study default when `None`.
    pub replications: Option<usize>,
    /// Study default when `None`.
    pub epsilons: Option<Vec<f64>>,
    pub data_dir: PathBuf,
    pub search: SearchConfig,
    pub m_min: usize,
    #[serde(skip)]
    pub precompute: PrecomputeOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            replications: None,
            epsilons: None,
            data_dir: default_data_dir(),
            search: SearchConfig::default(),
            m_min: DEFAULT_MIN_BIN,
            precompute: PrecomputeOptions::default(),
        }
    }
}

/// Bundled datasets next to the workspace root.
pub fn default_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

impl StudyConfig {
    fn select_options(&self, k_max: Option<usize>) -> SelectOptions {
        SelectOptions {
            k_max,
            m_min: self.m_min,
            precompute: self.precompute,
        }
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub report: CoverageReport,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyOutput {
    pub study: String,
    pub rows: Vec<ResultRow>,
    /// Study-specific details (selected K, curves, example sets, ...).
    pub details: serde_json::Value,
}

impl StudyOutput {
    pub fn row(&self, method: &str, epsilon: f64) -> Option<&CoverageReport> {
        self.rows
            .iter()
            .map(|r| &r.report)
            .find(|r| r.method == method && (r.epsilon - epsilon).abs() < 1e-12)
    }
}

pub trait Study: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn run(&self, cfg: &StudyConfig) -> Result<StudyOutput>;
}

/// Named studies available to `reproduce`.
pub struct StudyRegistry {
    studies: Vec<Box<dyn Study>>,
}

impl StudyRegistry {
    pub fn empty() -> Self {
        Self {
            studies: Vec::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(BimodalStudy));
        reg.register(Box::new(HeteroCoverageStudy));
        reg.register(Box::new(RealDataStudy::faithful()));
        reg.register(Box::new(RealDataStudy::mcycle()));
        reg
    }

    pub fn register(&mut self, study: Box<dyn Study>) {
        self.studies.retain(|s| s.name() != study.name());
        self.studies.push(study);
    }

    pub fn names(&self) -> impl Iterator<Item = (&'static str, &'static str)> + '_ {
        self.studies.iter().map(|s| (s.name(), s.summary()))
    }

    pub fn get(&self, name: &str) -> Result<&dyn Study> {
        self.studies
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStudy(name.to_string()))
    }
}

// ---- bimodal ---------------------------------------------------------------

/// Parameters of the single-bin bimodal comparison.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BimodalParams {
    pub replications: usize,
    pub m: usize,
    pub m_test: usize,
    pub epsilon: f64,
}

impl Default for BimodalParams {
    fn default() -> Self {
        Self {
            replications: 500,
            m: 50,
            m_test: 500,
            epsilon: 0.1,
        }
    }
}

/// CRPS and 1-NN sets on fresh bimodal bins; rows in that order.
pub fn bimodal_study(
    params: &BimodalParams,
    seed: RngSeed,
    search: &SearchConfig,
) -> Result<[CoverageReport; 2]> {
    if params.replications == 0 {
        return Err(Error::EmptyInput);
    }
    let knn = KnnScore::new(1)?;
    let scores: [&dyn NonconformityScore; 2] = [&CrpsScore, &knn];
    let per_rep = (0..params.replications as u64)
        .into_par_iter()
        .map(|r| {
            let s = seed.derive(r);
            let bin = ReferenceBin::new(gen_bimodal(params.m, s.derive(0))?)?;
            let test = gen_bimodal(params.m_test, s.derive(1))?;
            let mut out = [Outcome::empty(); 2];
            for (slot, score) in out.iter_mut().zip(scores) {
                let set = prediction_set(&bin, params.epsilon, score, search)?;
                for &y in &test {
                    slot.push(set.contains(y), set.measure());
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |i: usize| -> Vec<Outcome> { per_rep.iter().map(|o| o[i]).collect() };
    Ok([
        aggregate(&scores[0].kind().to_string(), params.epsilon, &col(0)),
        aggregate(&scores[1].kind().to_string(), params.epsilon, &col(1)),
    ])
}

pub struct BimodalStudy;

impl Study for BimodalStudy {
    fn name(&self) -> &'static str {
        "bimodal"
    }

    fn summary(&self) -> &'static str {
        "CRPS vs 1-NN sets on a two-mode bin (R = 500, m = 50)"
    }

    fn run(&self, cfg: &StudyConfig) -> Result<StudyOutput> {
        let mut params = BimodalParams::default();
        if let Some(r) = cfg.replications {
            params.replications = r;
        }
        let epsilons = cfg.epsilons.clone().unwrap_or_else(|| vec![params.epsilon]);
        let mut rows = Vec::new();
        let mut ratios = Vec::new();
        for (i, &eps) in epsilons.iter().enumerate() {
            let p = BimodalParams {
                epsilon: eps,
                ..params
            };
            let [crps, knn] = bimodal_study(&p, RngSeed(cfg.seed).derive(i as u64), &cfg.search)?;
            ratios.push(
                json!({"epsilon": eps, "measure_ratio": crps.mean_measure / knn.mean_measure}),
            );
            rows.push(ResultRow {
                report: crps,
                note: String::new(),
            });
            rows.push(ResultRow {
                report: knn,
                note: String::new(),
            });
        }
        Ok(StudyOutput {
            study: self.name().into(),
            rows,
            details: json!({"params": params, "crps_over_knn": ratios}),
        })
    }
}

// ---- heteroscedastic coverage ----------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct HeteroParams {
    pub n_train: usize,
    pub n_test: usize,
    pub k_max: usize,
    pub epsilons: Vec<f64>,
}

impl Default for HeteroParams {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 2000,
            k_max: 20,
            epsilons: vec![0.05, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeteroRun {
    pub selection: Selection,
    pub model: FittedModel,
    pub reports: Vec<CoverageReport>,
}

/// Select K on a synthetic training set, fit, and measure CRPS-set coverage
/// on an independent test set.
pub fn hetero_coverage(
    params: &HeteroParams,
    seed: RngSeed,
    cfg: &StudyConfig,
) -> Result<HeteroRun> {
    let train = gen_heteroscedastic(params.n_train, seed)?;
    let test = gen_heteroscedastic(params.n_test, seed.derive(1))?;
    let selection = select_k(&train, &cfg.select_options(Some(params.k_max)))?;
    let model = FittedModel::fit(&train, selection.kcurve.k_star, cfg.m_min, &cfg.precompute)?;
    let reports = params
        .epsilons
        .iter()
        .map(|&eps| coverage_eval(&model, &test, eps, &CrpsScore, &cfg.search))
        .collect::<Result<_>>()?;
    Ok(HeteroRun {
        selection,
        model,
        reports,
    })
}

pub struct HeteroCoverageStudy;

/// Covariate values at which the study reports example sets.
pub const HETERO_EXAMPLE_X: [f64; 3] = [0.3, 1.5, 2.7];

impl Study for HeteroCoverageStudy {
    fn name(&self) -> &'static str {
        "hetero-coverage"
    }

    fn summary(&self) -> &'static str {
        "synthetic heteroscedastic data: K selection and coverage on 2000 fresh points"
    }

    fn run(&self, cfg: &StudyConfig) -> Result<StudyOutput> {
        let mut params = HeteroParams::default();
        if let Some(e) = &cfg.epsilons {
            params.epsilons = e.clone();
        }
        let reps = cfg.replications.unwrap_or(1).max(1);
        let runs = (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let seed = if reps == 1 {
                    RngSeed(cfg.seed)
                } else {
                    RngSeed(cfg.seed).derive(r)
                };
                hetero_coverage(&params, seed, cfg)
            })
            .collect::<Result<Vec<_>>>()?;

        let rows = if reps == 1 {
            runs[0].reports.clone()
        } else {
            params
                .epsilons
                .iter()
                .enumerate()
                .map(|(i, &eps)| {
                    let covs: Vec<f64> = runs.iter().map(|r| r.reports[i].coverage).collect();
                    let ms: Vec<f64> = runs.iter().map(|r| r.reports[i].mean_measure).collect();
                    let (coverage, se_coverage) = mean_and_se(&covs);
                    let (mean_measure, se_measure) = mean_and_se(&ms);
                    CoverageReport {
                        method: ScoreKind::Crps.to_string(),
                        epsilon: eps,
                        coverage,
                        mean_measure,
                        se_coverage,
                        se_measure,
                        n_test: params.n_test,
                        replications: reps,
                        n_wholeline: runs.iter().map(|r| r.reports[i].n_wholeline).sum(),
                    }
                })
                .collect()
        };

        let first = &runs[0];
        let examples = HETERO_EXAMPLE_X
            .iter()
            .map(|&x| {
                let bin = first.model.locate_bin(x);
                let set = prediction_set(first.model.bin(bin), 0.1, &CrpsScore, &cfg.search)?;
                Ok(json!({
                    "x_star": x,
                    "bin": bin + 1,
                    "intervals": set.intervals,
                    "width": set.measure(),
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        let k_stars: Vec<usize> = runs.iter().map(|r| r.selection.kcurve.k_star).collect();
        Ok(StudyOutput {
            study: self.name().into(),
            rows: rows
                .into_iter()
                .map(|report| ResultRow {
                    report,
                    note: String::new(),
                })
                .collect(),
            details: json!({
                "params": params,
                "replications": reps,
                "K_star": k_stars,
                "first_run": {
                    "x_boundaries": first.model.x_boundaries(),
                    "bin_sizes": first.model.bin_sizes(),
                    "kcurve": first.selection.kcurve,
                    "loo_curve": first.selection.loo,
                    "example_sets_eps_0.1": examples,
                },
            }),
        })
    }
}

// ---- real data -------------------------------------------------------------

pub const METHOD_FULL_N: &str = "full_n_insample_eval";
pub const METHOD_HALF_N: &str = "n_half";
pub const METHOD_GAUSSIAN: &str = "gaussian_split";

#[derive(Debug, Clone)]
pub struct RealDataResult {
    pub k_star_full: usize,
    pub full_model: FittedModel,
    pub half_k_stars: Vec<usize>,
    pub rows: Vec<CoverageReport>,
}

/// Full-data model, per-split refits on the training half and the Gaussian
/// split-conformal baseline, all evaluated on the held-out half of `R`
/// random splits. Rows per level: full-n, n/2, Gaussian.
pub fn realdata_run(
    ds: &SortedDataset,
    replications: usize,
    epsilons: &[f64],
    seed: RngSeed,
    cfg: &StudyConfig,
) -> Result<RealDataResult> {
    if replications == 0 {
        return Err(Error::EmptyInput);
    }
    let full_sel = select_k(ds, &cfg.select_options(None))?;
    let k_star_full = full_sel.kcurve.k_star;
    let full_model = FittedModel::fit(ds, k_star_full, cfg.m_min, &cfg.precompute)?;
    let full_caches = epsilons
        .iter()
        .map(|&e| SetCache::new(&full_model, e, &CrpsScore, &cfg.search))
        .collect::<Result<Vec<_>>>()?;

    struct Rep {
        k_star: usize,
        full: Vec<Outcome>,
        half: Vec<Outcome>,
        gauss: Vec<Outcome>,
    }

    let reps = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let split = random_half_split(ds, seed.derive(r))?;
            let sel = select_k(&split.train, &cfg.select_options(None))?;
            let k_star = sel.kcurve.k_star;
            let model = FittedModel::fit(&split.train, k_star, cfg.m_min, &cfg.precompute)?;
            let ols = ols_fit(&split.train)?;
            let mut rep = Rep {
                k_star,
                full: Vec::new(),
                half: Vec::new(),
                gauss: Vec::new(),
            };
            for (i, &eps) in epsilons.iter().enumerate() {
                rep.full.push(outcome_on(&full_caches[i], &split.test));
                let cache = SetCache::new(&model, eps, &CrpsScore, &cfg.search)?;
                rep.half.push(outcome_on(&cache, &split.test));
                let baseline = calibrate(ols, &split.test, eps)?;
                let mut g = Outcome::empty();
                for o in split.test.observations() {
                    let iv = predict_interval(&baseline, o.x);
                    let measure = (!baseline.whole_line).then(|| iv.len());
                    g.push(baseline.whole_line || iv.contains(o.y), measure);
                }
                rep.gauss.push(g);
            }
            Ok(rep)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, &eps) in epsilons.iter().enumerate() {
        let pick = |f: fn(&Rep) -> &Vec<Outcome>| -> Vec<Outcome> {
            reps.iter().map(|r| f(r)[i]).collect()
        };
        rows.push(aggregate(METHOD_FULL_N, eps, &pick(|r| &r.full)));
        rows.push(aggregate(METHOD_HALF_N, eps, &pick(|r| &r.half)));
        rows.push(aggregate(METHOD_GAUSSIAN, eps, &pick(|r| &r.gauss)));
    }
    Ok(RealDataResult {
        k_star_full,
        full_model,
        half_k_stars: reps.iter().map(|r| r.k_star).collect(),
        rows,
    })
}

/// Benchmark on one bundled dataset.
pub struct RealDataStudy {
    name: &'static str,
    summary: &'static str,
    file: &'static str,
    x_col: &'static str,
    y_col: &'static str,
}

impl RealDataStudy {
    pub fn faithful() -> Self {
        Self {
            name: "faithful",
            summary: "Old Faithful eruption duration given waiting time (R = 200 splits)",
            file: "faithful.csv",
            x_col: "waiting",
            y_col: "eruptions",
        }
    }

    pub fn mcycle() -> Self {
        Self {
            name: "mcycle",
            summary: "motorcycle crash head acceleration given time (R = 200 splits)",
            file: "mcycle.csv",
            x_col: "times",
            y_col: "accel",
        }
    }

    pub fn load(&self, data_dir: &Path) -> Result<SortedDataset> {
        load_csv(data_dir.join(self.file), self.x_col, self.y_col)
    }
}

impl Study for RealDataStudy {
    fn name(&self) -> &'static str {
        self.name
    }

    fn summary(&self) -> &'static str {
        self.summary
    }

    fn run(&self, cfg: &StudyConfig) -> Result<StudyOutput> {
        let ds = self.load(&cfg.data_dir)?;
        let reps = cfg.replications.unwrap_or(200);
        let epsilons = cfg.epsilons.clone().unwrap_or_else(|| vec![0.1]);
        let res = realdata_run(&ds, reps, &epsilons, RngSeed(cfg.seed), cfg)?;
        let mut rows: Vec<ResultRow> = res
            .rows
            .iter()
            .map(|r| ResultRow {
                note: if r.method == METHOD_FULL_N {
                    "model fitted on all n; evaluation points were part of the fit".into()
                } else {
                    String::new()
                },
                report: r.clone(),
            })
            .collect();
        for &eps in &epsilons {
            for method in PLACEHOLDER_METHODS {
                rows.push(placeholder_row(method, eps));
            }
        }
        let mut k_hist = std::collections::BTreeMap::new();
        for &k in &res.half_k_stars {
            *k_hist.entry(k).or_insert(0usize) += 1;
        }
        Ok(StudyOutput {
            study: self.name.into(),
            rows,
            details: json!({
                "dataset": {"file": self.file, "x": self.x_col, "y": self.y_col, "n": ds.len()},
                "replications": reps,
                "K_star_full": res.k_star_full,
                "full_model": {
                    "x_boundaries": res.full_model.x_boundaries(),
                    "bin_sizes": res.full_model.bin_sizes(),
                },
                "K_star_half_histogram": k_hist,
            }),
        })
    }
}

fn placeholder_row(method: &str, epsilon: f64) -> ResultRow {
    ResultRow {
        report: CoverageReport {
            method: method.to_string(),
            epsilon,
            coverage: f64::NAN,
            mean_measure: f64::NAN,
            se_coverage: f64::NAN,
            se_measure: f64::NAN,
            n_test: 0,
            replications: 0,
            n_wholeline: 0,
        },
        note: "not reproduced; placeholder for external results".into(),
    }
}

// ---- output ----------------------------------------------------------------

pub const RESULTS_COLUMNS: [&str; 11] = [
    "study",
    "method",
    "epsilon",
    "coverage",
    "se_coverage",
    "mean_measure",
    "se_measure",
    "n_test",
    "replications",
    "n_wholeline",
    "note",
];

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format_real(v)
    }
}

/// Results CSV, one row per method and level, after a `#` config line.
pub fn write_results_csv(
    mut out: impl Write,
    output: &StudyOutput,
    config: &serde_json::Value,
) -> Result<()> {
    writeln!(
        out,
        "# crpsbin format_version={FORMAT_VERSION} config={config}"
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_COLUMNS)?;
    for row in &output.rows {
        let r = &row.report;
        w.write_record([
            output.study.clone(),
            r.method.clone(),
            format_real(r.epsilon),
            cell(r.coverage),
            cell(r.se_coverage),
            cell(r.mean_measure),
            cell(r.se_measure),
            r.n_test.to_string(),
            r.replications.to_string(),
            r.n_wholeline.to_string(),
            row.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON summary: rows, study details and run metadata.
pub fn summary_json(
    output: &StudyOutput,
    cfg: &StudyConfig,
    config: &serde_json::Value,
) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = output
        .rows
        .iter()
        .map(|row| {
            let r = &row.report;
            let num = |v: f64| {
                if v.is_finite() {
                    json!(v)
                } else {
                    serde_json::Value::Null
                }
            };
            json!({
                "method": r.method,
                "epsilon": r.epsilon,
                "coverage": num(r.coverage),
                "se_coverage": num(r.se_coverage),
                "mean_measure": num(r.mean_measure),
                "se_measure": num(r.se_measure),
                "n_test": r.n_test,
                "replications": r.replications,
                "n_wholeline": r.n_wholeline,
                "note": row.note,
            })
        })
        .collect();
    json!({
        "format_version": FORMAT_VERSION,
        "study": output.study,
        "seed": cfg.seed,
        "rng": RNG_NAME,
        "grid": cfg.search,
        "m_min": cfg.m_min,
        "git_describe": GIT_DESCRIBE,
        "config": config,
        "rows": rows,
        "details": output.details,
    })
}
