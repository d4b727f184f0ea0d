//! Batch command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::dataio::{self, CsvOptions, Dataset};
use crate::diagnostics::{self, Resampling, ResampleConfig, DEFAULT_OUTLIER_FRACTION};
use crate::error::{Error, Result};
use crate::pca::{self, Components, PcaConfig, PrincipalModel};
use crate::predictor::{self, MetricSpec};

/// Environment variable selecting the worker thread count.
pub const THREADS_ENV: &str = "PCADIST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pcadist", version, about = "PCA-distance imputation of missing values")]
struct Cli {
    /// Print the resolved configuration as JSON and exit without running.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the principal model on the complete rows and save it as JSON.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fill every missing cell and write the completed table.
    Impute {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Use a saved model instead of fitting one.
        #[arg(long, conflicts_with_all = ["n", "no_scale", "outlier_fraction"])]
        model_file: Option<PathBuf>,
        /// CSV file holding a symmetric positive-definite m x m matrix.
        #[arg(long)]
        metric: Option<PathBuf>,
        /// Drop this share of the most influential complete rows before fitting.
        #[arg(long)]
        outlier_fraction: Option<f64>,
        #[arg(long, requires = "outlier_fraction")]
        iterative: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Influence scores of the complete rows.
    Outliers {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_OUTLIER_FRACTION)]
        fraction: f64,
        #[arg(long)]
        iterative: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Leave-one-out cross-validation of one column.
    Validate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Column name or zero-based index.
        #[arg(long)]
        target: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Resampling intervals for the incomplete rows.
    Ci {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Restrict to one incomplete data row (counted from 1).
        #[arg(long)]
        row: Option<usize>,
        #[arg(long, value_enum, default_value_t = MethodArg::Bootstrap)]
        method: MethodArg,
        /// Rows left out per jackknife replicate.
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value_t = 500)]
        replicates: usize,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Bootstrap,
    Jackknife,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Field delimiter (single byte).
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Comma-separated missing-value markers; defaults to "", NA and NaN.
    #[arg(long)]
    missing: Option<String>,
    #[arg(long)]
    no_header: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Component count (integer) or explained-variance fraction (decimal).
    #[arg(long)]
    n: Option<String>,
    /// Center the columns without dividing by their standard deviation.
    #[arg(long)]
    no_scale: bool,
}

/// Fully resolved and validated settings of one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub input: PathBuf,
    pub csv: CsvOptions,
    pub pca: PcaConfig,
    pub model_file: Option<PathBuf>,
    pub metric: Option<PathBuf>,
    pub outlier_fraction: Option<f64>,
    pub iterative: bool,
    pub target: Option<String>,
    pub row: Option<usize>,
    pub resample: Option<ResampleConfig>,
    pub output: PathBuf,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn resolve_input(args: InputArgs) -> std::result::Result<(PathBuf, CsvOptions), Failure> {
    let delimiter = match args.delimiter.as_bytes() {
        [b] => *b,
        _ if args.delimiter == "\\t" => b'\t',
        _ => return Err(usage(format!("delimiter {:?} must be one byte", args.delimiter))),
    };
    let mut csv = CsvOptions {
        header: !args.no_header,
        delimiter,
        ..Default::default()
    };
    if let Some(list) = args.missing {
        csv.missing_markers = list.split(',').map(|s| s.trim().to_string()).collect();
    }
    Ok((args.input, csv))
}

fn resolve_model(args: &ModelArgs) -> std::result::Result<PcaConfig, Failure> {
    let components = match &args.n {
        Some(text) => text
            .parse::<Components>()
            .map_err(|e| usage(format!("--n: {e}")))?,
        None => Components::default(),
    };
    Ok(PcaConfig {
        components,
        standardize: !args.no_scale,
    })
}

fn base_config(
    command: &str,
    input: InputArgs,
    model: &ModelArgs,
    output: PathBuf,
) -> std::result::Result<RunConfig, Failure> {
    let (input, csv) = resolve_input(input)?;
    Ok(RunConfig {
        command: command.to_string(),
        input,
        csv,
        pca: resolve_model(model)?,
        model_file: None,
        metric: None,
        outlier_fraction: None,
        iterative: false,
        target: None,
        row: None,
        resample: None,
        output,
    })
}

fn check_fraction(flag: &str, fraction: f64) -> std::result::Result<(), Failure> {
    if (0.0..0.5).contains(&fraction) {
        Ok(())
    } else {
        Err(usage(format!("{flag} {fraction} must lie in [0, 0.5)")))
    }
}

fn resolve(command: Command) -> std::result::Result<RunConfig, Failure> {
    let config = match command {
        Command::Fit { input, model, output } => base_config("fit", input, &model, output)?,
        Command::Impute {
            input,
            model,
            model_file,
            metric,
            outlier_fraction,
            iterative,
            output,
        } => {
            if let Some(f) = outlier_fraction {
                check_fraction("--outlier-fraction", f)?;
            }
            RunConfig {
                model_file,
                metric,
                outlier_fraction,
                iterative,
                ..base_config("impute", input, &model, output)?
            }
        }
        Command::Outliers {
            input,
            model,
            fraction,
            iterative,
            output,
        } => {
            check_fraction("--fraction", fraction)?;
            RunConfig {
                outlier_fraction: Some(fraction),
                iterative,
                ..base_config("outliers", input, &model, output)?
            }
        }
        Command::Validate {
            input,
            model,
            target,
            output,
        } => RunConfig {
            target: Some(target),
            ..base_config("validate", input, &model, output)?
        },
        Command::Ci {
            input,
            model,
            row,
            method,
            p,
            replicates,
            level,
            seed,
            output,
        } => {
            let method = match method {
                MethodArg::Bootstrap => Resampling::Bootstrap,
                MethodArg::Jackknife => Resampling::Jackknife { p },
            };
            let resample = ResampleConfig {
                method,
                replicates,
                level,
                seed,
            };
            if replicates < 20 {
                return Err(usage("--replicates must be at least 20"));
            }
            if !(level > 0.0 && level < 1.0) {
                return Err(usage(format!("--level {level} must lie in (0, 1)")));
            }
            if p == 0 {
                return Err(usage("--p must be at least 1"));
            }
            RunConfig {
                row,
                resample: Some(resample),
                ..base_config("ci", input, &model, output)?
            }
        }
    };
    Ok(config)
}

fn target_index(dataset: &Dataset, target: &str) -> Result<usize> {
    if let Some(j) = dataset.column_names.iter().position(|c| c == target) {
        return Ok(j);
    }
    match target.parse::<usize>() {
        Ok(j) if j < dataset.ncols() => Ok(j),
        Ok(j) => Err(Error::IndexOutOfRange {
            index: j,
            dim: dataset.ncols(),
        }),
        Err(_) => Err(Error::UnknownColumn(target.to_string())),
    }
}

fn load_metric(path: &Path, m: usize) -> Result<MetricSpec> {
    let options = CsvOptions {
        missing_markers: Vec::new(),
        header: false,
        delimiter: b',',
    };
    let table = dataio::load_csv(path, &options)?;
    let values = DMatrix::from_fn(table.rows.len(), table.ncols(), |i, j| table.rows[i][j]);
    if values.nrows() != m || values.ncols() != m {
        return Err(Error::InvalidArgument(format!(
            "metric matrix in {} is {}x{}, expected {m}x{m}",
            path.display(),
            values.nrows(),
            values.ncols()
        )));
    }
    MetricSpec::general(values)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Row numbers (from 1) of the complete rows, as they appear in the input.
fn complete_row_ids(dataset: &Dataset) -> Vec<usize> {
    dataset.complete_rows().into_iter().map(|i| i + 1).collect()
}

fn execute(config: &RunConfig) -> Result<()> {
    let dataset = dataio::load_csv(&config.input, &config.csv)?;
    let data = dataset.complete_matrix();
    match config.command.as_str() {
        "fit" => {
            let model = pca::fit_pca(&data, &config.pca)?;
            model.save_json(&config.output)?;
            println!(
                "fitted {} components on {} complete rows x {} columns ({:.4} of variance{})",
                model.n(),
                data.nrows(),
                data.ncols(),
                model.explained_fraction(),
                if model.clamped { ", clamped to rank" } else { "" }
            );
        }
        "impute" => {
            let (model, removed) = match &config.model_file {
                Some(path) => (PrincipalModel::load_json(path)?, Vec::new()),
                None => {
                    let (train, removed) = match config.outlier_fraction {
                        Some(f) => {
                            let out = diagnostics::remove_outliers(
                                &data,
                                &config.pca,
                                f,
                                config.iterative,
                            )?;
                            (out.kept, out.removed)
                        }
                        None => (data.clone(), Vec::new()),
                    };
                    (pca::fit_pca(&train, &config.pca)?, removed)
                }
            };
            if model.dim() != dataset.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: dataset.ncols(),
                    found: model.dim(),
                });
            }
            let metric = match &config.metric {
                Some(path) => Some(load_metric(path, dataset.ncols())?),
                None => None,
            };
            let mut results = BTreeMap::new();
            for row in dataset.incomplete_rows() {
                let mut task = dataset.task(row)?;
                if let Some(m) = &metric {
                    task = task.with_metric(m.clone())?;
                }
                results.insert(row, predictor::impute_record(&model, &task)?);
            }
            dataio::write_imputed(&dataset, &results, &config.output, config.csv.delimiter)?;
            let invariant = results.values().filter(|r| r.distance_invariant).count();
            println!(
                "imputed {} rows with {} components; removed {} outlier rows; {} distance-invariant",
                results.len(),
                model.n(),
                removed.len(),
                invariant
            );
        }
        "outliers" => {
            let fraction = config.outlier_fraction.unwrap_or(DEFAULT_OUTLIER_FRACTION);
            let out = diagnostics::remove_outliers(&data, &config.pca, fraction, config.iterative)?;
            let ids = complete_row_ids(&dataset);
            out.report.write_csv(create(&config.output)?, &ids)?;
            let removed: Vec<String> = out.removed.iter().map(|&i| ids[i].to_string()).collect();
            println!(
                "influence of {} rows with {} components; outlying rows: [{}]",
                data.nrows(),
                out.report.n,
                removed.join(", ")
            );
        }
        "validate" => {
            let name = config.target.as_deref().unwrap_or_default();
            let target = target_index(&dataset, name)?;
            let report = diagnostics::loo_cv(&data, &config.pca, target)?;
            #[derive(Serialize)]
            struct Output<'a> {
                target_name: &'a str,
                rows: Vec<usize>,
                #[serde(flatten)]
                report: &'a diagnostics::ValidationReport,
            }
            write_json(
                &config.output,
                &Output {
                    target_name: &dataset.column_names[target],
                    rows: complete_row_ids(&dataset),
                    report: &report,
                },
            )?;
            println!(
                "leave-one-out MSE for {}: {} (column-mean baseline {})",
                dataset.column_names[target], report.mse, report.baseline_mse
            );
        }
        "ci" => {
            let resample = config.resample.expect("ci config carries resampling");
            let rows = match config.row {
                Some(r) if r >= 1 && r <= dataset.rows.len() && !dataset.is_complete(r - 1) => {
                    vec![r - 1]
                }
                Some(r) => {
                    return Err(Error::InvalidArgument(format!(
                        "row {r} is not an incomplete data row"
                    )))
                }
                None => dataset.incomplete_rows(),
            };
            #[derive(Serialize)]
            struct Entry {
                row: usize,
                column_name: String,
                #[serde(flatten)]
                estimate: diagnostics::IntervalEstimate,
            }
            let mut entries = Vec::new();
            for row in rows {
                let task = dataset.task(row)?;
                for estimate in diagnostics::resample_ci(&data, &config.pca, &task, &resample)? {
                    println!(
                        "row {} {}: {} [{}, {}]",
                        row + 1,
                        dataset.column_names[estimate.column],
                        estimate.point,
                        estimate.lower,
                        estimate.upper
                    );
                    entries.push(Entry {
                        row: row + 1,
                        column_name: dataset.column_names[estimate.column].clone(),
                        estimate,
                    });
                }
            }
            write_json(&config.output, &entries)?;
        }
        other => unreachable!("unknown command {other}"),
    }
    Ok(())
}

fn configure_threads() -> std::result::Result<(), Failure> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value
            .parse()
            .map_err(|_| usage(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
        // A second call in the same process finds the pool already built.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(())
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let print_config = cli.print_config;
    let outcome = configure_threads().and_then(|_| resolve(cli.command)).and_then(|config| {
        if print_config {
            println!(
                "{}",
                serde_json::to_string_pretty(&config).expect("config serializes")
            );
            return Ok(());
        }
        execute(&config).map_err(Failure::Data)
    });
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
