use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crpsbin::conformal::{p_curve, prediction_set, FittedModel, SearchConfig};
use crpsbin::cost_matrix::{check_quadrangle, precompute, PrecomputeOptions, DEFAULT_MEM_CAP};
use crpsbin::dataset::{gen_heteroscedastic, load_csv, RngSeed, SortedDataset};
use crpsbin::experiments::{summary_json, write_results_csv, StudyConfig, StudyRegistry};
use crpsbin::score::{NonconformityScore, ScoreParams, ScoreRegistry};
use crpsbin::select::{format_real, select_k, write_curve_csv, SelectOptions};
use crpsbin::{Error, FORMAT_VERSION};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "crpsbin",
    version,
    about = "CRPS-optimal binning and conformal prediction sets"
)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 20240601)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "CRPSBIN_THREADS")]
    threads: Option<usize>,
    /// Memory cap in bytes for the cost table.
    #[arg(long, global = true, default_value_t = DEFAULT_MEM_CAP)]
    mem_cap: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Choose K by test CRPS on an alternating split.
    SelectK(SelectKArgs),
    /// Fit the optimal K-bin model and write it as JSON.
    Fit(FitArgs),
    /// Prediction sets for new covariate values.
    Predict(PredictArgs),
    /// Run a named study and write its results table and summary.
    Reproduce(ReproduceArgs),
    /// Quadrangle probe and paired LOO / test CRPS curves.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Simulation {
    Hetero,
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long, conflicts_with = "simulate")]
    data: Option<PathBuf>,
    /// Covariate column.
    #[arg(long, default_value = "x")]
    x: String,
    /// Response column.
    #[arg(long, default_value = "y")]
    y: String,
    /// Generate data instead of reading a file.
    #[arg(long, value_enum)]
    simulate: Option<Simulation>,
    /// Size of simulated data.
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<SortedDataset> {
        match (&self.data, self.simulate) {
            (Some(path), _) => Ok(load_csv(path, &self.x, &self.y)?),
            (None, Some(Simulation::Hetero)) => Ok(gen_heteroscedastic(self.n, RngSeed(seed))?),
            (None, None) => bail!("give --data FILE or --simulate hetero"),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SelectKArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Largest K tried (default floor(n / 10)).
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 2)]
    m_min: usize,
    #[arg(long, default_value = "kcurve.csv")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of bins.
    #[arg(
        long = "k",
        short = 'k',
        required_unless_present = "auto_k",
        conflicts_with = "auto_k"
    )]
    k: Option<usize>,
    /// Select K by cross-validation first.
    #[arg(long)]
    auto_k: bool,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 2)]
    m_min: usize,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SearchArgs {
    /// Evaluation grid size for prediction sets.
    #[arg(long, default_value_t = 4096)]
    grid_points: usize,
    /// Search padding in units of the bin's response range.
    #[arg(long, default_value_t = 1.0)]
    range_multiplier: f64,
    /// Endpoint tolerance relative to the response range.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

impl SearchArgs {
    fn config(&self) -> SearchConfig {
        SearchConfig {
            grid_points: self.grid_points,
            range_multiplier: self.range_multiplier,
            tol_rel: self.tol,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Covariate values (comma separated or repeated).
    #[arg(long = "x-star", value_delimiter = ',', allow_negative_numbers = true)]
    x_star: Vec<f64>,
    /// File with one covariate value per line.
    #[arg(long)]
    x_file: Option<PathBuf>,
    /// Observed responses aligned with the covariates; adds p_of_observed.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    y_observed: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Nonconformity score (crps, knn).
    #[arg(long, default_value = "crps")]
    score: String,
    /// Neighbour rank for the knn score.
    #[arg(long = "k", default_value_t = 1)]
    k: usize,
    #[command(flatten)]
    search: SearchArgs,
    /// Output CSV (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump p(y) over a grid for one covariate value: X_STAR OUT.
    #[arg(long, num_args = 2, value_names = ["X_STAR", "OUT"], allow_negative_numbers = true)]
    pcurve: Vec<String>,
    /// Grid size of the p-value dump.
    #[arg(long, default_value_t = 2000)]
    pcurve_points: usize,
}

#[derive(Debug, Args, Serialize)]
struct ReproduceArgs {
    /// Study name (bimodal, hetero-coverage, faithful, mcycle).
    study: String,
    /// Replications (study default when omitted).
    #[arg(long = "R", short = 'R')]
    replications: Option<usize>,
    /// Levels (study default when omitted).
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    /// Directory holding the bundled datasets.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    m_min: usize,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args, Serialize)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Quadruples sampled when n is above the exhaustive limit.
    #[arg(long, default_value_t = 200_000)]
    samples: u64,
    /// Violations listed in the output.
    #[arg(long, default_value_t = 10)]
    max_reports: usize,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 2)]
    m_min: usize,
    /// Paired LOO / test CRPS curve.
    #[arg(long, default_value = "diagnose_kcurve.csv")]
    out: PathBuf,
}

fn precompute_options(cli: &Cli) -> PrecomputeOptions {
    PrecomputeOptions {
        mem_cap: cli.mem_cap,
        ..PrecomputeOptions::default()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn config_of(cli: &Cli) -> serde_json::Value {
    serde_json::to_value(cli).unwrap_or(serde_json::Value::Null)
}

fn cmd_select_k(cli: &Cli, args: &SelectKArgs) -> Result<()> {
    let ds = args.data.load(cli.seed)?;
    let sel = select_k(
        &ds,
        &SelectOptions {
            k_max: args.k_max,
            m_min: args.m_min,
            precompute: precompute_options(cli),
        },
    )?;
    write_curve_csv(create(&args.out)?, &sel, &config_of(cli))?;
    println!("n = {}, K_max = {}", ds.len(), sel.kcurve.k_max);
    println!("K* = {}", sel.kcurve.k_star);
    println!("curve written to {}", args.out.display());
    Ok(())
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let ds = args.data.load(cli.seed)?;
    let opts = precompute_options(cli);
    let k = match args.k {
        Some(k) => k,
        None => {
            let sel = select_k(
                &ds,
                &SelectOptions {
                    k_max: args.k_max,
                    m_min: args.m_min,
                    precompute: opts,
                },
            )?;
            println!("K* = {}", sel.kcurve.k_star);
            sel.kcurve.k_star
        }
    };
    let model = FittedModel::fit(&ds, k, args.m_min, &opts)?;
    model.save(&args.out)?;
    println!("K = {}", model.k());
    println!(
        "boundaries: [{}]",
        model
            .x_boundaries()
            .iter()
            .map(|b| format_real(*b))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!(
        "bin sizes: [{}]",
        model
            .bin_sizes()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("total cost = {}", format_real(model.total_cost()));
    println!("model written to {}", args.out.display());
    Ok(())
}

fn read_x_file(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()).into());
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .with_context(|| {
                    format!(
                        "{}: entry {} ({l:?}) is not a number",
                        path.display(),
                        i + 1
                    )
                })
        })
        .collect()
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let model = FittedModel::load(&args.model)?;
    let score: Box<dyn NonconformityScore> =
        ScoreRegistry::builtin().create(&args.score, &ScoreParams { k: args.k })?;
    let search = args.search.config();
    let mut xs = args.x_star.clone();
    if let Some(path) = &args.x_file {
        xs.extend(read_x_file(path)?);
    }
    if !args.y_observed.is_empty() && args.y_observed.len() != xs.len() {
        bail!(
            "--y-observed has {} values for {} covariate values",
            args.y_observed.len(),
            xs.len()
        );
    }
    if xs.is_empty() && args.pcurve.is_empty() {
        bail!("no covariate values: give --x-star or --x-file");
    }

    let mut sets = Vec::with_capacity(xs.len());
    for &x in &xs {
        let bin = model.locate_bin(x);
        sets.push((
            x,
            bin,
            prediction_set(model.bin(bin), args.epsilon, score.as_ref(), &search)?,
        ));
    }
    let width = sets.iter().map(|s| s.2.intervals.len()).max().unwrap_or(1);
    let mut header = vec!["x_star".to_string(), "bin".into(), "whole_line".into()];
    for i in 1..=width {
        header.push(format!("lo_{i}"));
        header.push(format!("hi_{i}"));
    }
    let with_p = !args.y_observed.is_empty();
    if with_p {
        header.push("p_of_observed".into());
    }

    let out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut out = out;
    writeln!(
        out,
        "# crpsbin format_version={FORMAT_VERSION} config={}",
        config_of(cli)
    )?;
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(&header)?;
    for (t, (x, bin, set)) in sets.iter().enumerate() {
        let mut row = vec![
            format_real(*x),
            (bin + 1).to_string(),
            set.whole_line.to_string(),
        ];
        for i in 0..width {
            match set.intervals.get(i) {
                Some(iv) => {
                    row.push(format_real(iv.lo));
                    row.push(format_real(iv.hi));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        if with_p {
            let p = score.p_value(model.bin(*bin), args.y_observed[t]);
            row.push(format_real(p));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);

    if let [x, path] = args.pcurve.as_slice() {
        let x: f64 = x
            .parse()
            .with_context(|| format!("--pcurve: {x:?} is not a number"))?;
        let bin = model.bin_for(x);
        let pad = (bin.max() - bin.min()).max(1.0) * search.range_multiplier;
        let curve = p_curve(
            bin,
            score.as_ref(),
            bin.min() - pad,
            bin.max() + pad,
            args.pcurve_points,
        )?;
        let mut f = create(Path::new(path))?;
        writeln!(
            f,
            "# crpsbin format_version={FORMAT_VERSION} config={}",
            config_of(cli)
        )?;
        writeln!(f, "y,p")?;
        for (y, p) in curve {
            writeln!(f, "{},{}", format_real(y), format_real(p))?;
        }
        f.flush()?;
        eprintln!("p-value curve written to {path}");
    }
    Ok(())
}

fn display(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        "-".into()
    }
}

fn cmd_reproduce(cli: &Cli, args: &ReproduceArgs) -> Result<()> {
    let registry = StudyRegistry::builtin();
    let study = registry.get(&args.study)?;
    let cfg = StudyConfig {
        seed: cli.seed,
        replications: args.replications,
        epsilons: (!args.epsilon.is_empty()).then(|| args.epsilon.clone()),
        data_dir: args
            .data_dir
            .clone()
            .unwrap_or_else(crpsbin::experiments::default_data_dir),
        search: args.search.config(),
        m_min: args.m_min,
        precompute: precompute_options(cli),
    };
    let output = study.run(&cfg)?;
    let config = config_of(cli);
    let csv_path = args.out_dir.join(format!("{}_results.csv", study.name()));
    let json_path = args.out_dir.join(format!("{}_summary.json", study.name()));
    write_results_csv(create(&csv_path)?, &output, &config)?;
    let mut f = create(&json_path)?;
    serde_json::to_writer_pretty(&mut f, &summary_json(&output, &cfg, &config))?;
    f.flush()?;

    println!(
        "{:<22} {:>7} {:>16} {:>18} {:>6}",
        "method", "eps", "coverage (%)", "mean measure", "whole"
    );
    for row in &output.rows {
        let r = &row.report;
        println!(
            "{:<22} {:>7} {:>16} {:>18} {:>6}",
            r.method,
            display(r.epsilon, 2),
            format!(
                "{} ± {}",
                display(100.0 * r.coverage, 1),
                display(100.0 * r.se_coverage, 1)
            ),
            format!(
                "{} ± {}",
                display(r.mean_measure, 3),
                display(r.se_measure, 3)
            ),
            r.n_wholeline
        );
    }
    println!("results: {}", csv_path.display());
    println!("summary: {}", json_path.display());
    Ok(())
}

fn cmd_diagnose(cli: &Cli, args: &DiagnoseArgs) -> Result<()> {
    let ds = args.data.load(cli.seed)?;
    let cm = precompute(&ds.ys(), &precompute_options(cli))?;
    let report = check_quadrangle(&cm, args.max_reports, args.samples, RngSeed(cli.seed));
    println!(
        "quadrangle probe ({}): {} of {} quadruples violate (tolerance {:e})",
        if report.exhaustive {
            "exhaustive"
        } else {
            "sampled"
        },
        report.violation_count,
        report.checked,
        report.tolerance
    );
    for v in &report.violations {
        println!("  a={} b={} c={} d={} gap={:e}", v.a, v.b, v.c, v.d, v.gap);
    }
    if ds.len() >= crpsbin::select::MIN_SELECT_N {
        let sel = select_k(
            &ds,
            &SelectOptions {
                k_max: args.k_max,
                m_min: args.m_min,
                precompute: precompute_options(cli),
            },
        )?;
        let config =
            json!({"cli": config_of(cli), "quadrangle_violations": report.violation_count});
        write_curve_csv(create(&args.out)?, &sel, &config)?;
        println!(
            "LOO curve non-increasing in K: {}",
            sel.loo.is_non_increasing()
        );
        println!("K* = {}", sel.kcurve.k_star);
        println!("curve written to {}", args.out.display());
    } else {
        println!("n = {} is too small for the K curves; skipped", ds.len());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::SelectK(a) => cmd_select_k(cli, a),
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Reproduce(a) => cmd_reproduce(cli, a),
        Command::Diagnose(a) => cmd_diagnose(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::MissingFile(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
