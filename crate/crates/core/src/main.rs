use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use robust_vif::cv::{self, CvSpec, Metric};
use robust_vif::data::{self, IngestOptions};
use robust_vif::report;
use robust_vif::selection::{Method, SelectorConfig};
use robust_vif::sim::{self, ExperimentFile};
use robust_vif::{Dataset, Result, StandardizeMode};

#[derive(Parser)]
#[command(name = "rvif", version, about = "Robust VIF streamwise variable selection")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select variables on a data file and report the fitted model.
    Select {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        selector: SelectorArgs,
        /// Per-candidate trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// K-fold cross-validated prediction error.
    Cv {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        selector: SelectorArgs,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// mape or mse.
        #[arg(long, default_value = "mape")]
        metric: Metric,
    },
    /// Repeat selection under random column orders.
    Stability {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        selector: SelectorArgs,
        #[arg(long, default_value_t = 100)]
        orders: usize,
    },
    /// Run simulation experiments described in a TOML file.
    Simulate {
        /// Experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Override the replication count of every experiment.
        #[arg(long)]
        replications: Option<usize>,
        /// Override the master seed of every experiment.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the summary table here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write per-replication results as JSON.
        #[arg(long)]
        details: Option<PathBuf>,
        /// Field delimiter of the summary table.
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
}

#[derive(Args)]
struct Input {
    /// Delimited text file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    response: String,
    /// Read tab-separated input.
    #[arg(long, conflicts_with = "delimiter")]
    tab: bool,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Append all pairwise products of the covariates.
    #[arg(long)]
    interactions: bool,
    /// classical (mean/sd) or robust (median/MAD).
    #[arg(long, default_value = "classical")]
    standardize: StandardizeMode,
    /// Report file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelectorArgs {
    /// robust, classical, or a comma-separated list.
    #[arg(long, value_delimiter = ',', default_value = "robust")]
    method: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows used to estimate each candidate's partial variance.
    #[arg(long)]
    subsample_m: Option<usize>,
    /// Initial α-wealth.
    #[arg(long)]
    w0: Option<f64>,
    /// Wealth earned per selected variable.
    #[arg(long)]
    dw: Option<f64>,
    #[arg(long)]
    c_tukey: Option<f64>,
    #[arg(long)]
    c_huber: Option<f64>,
    /// Extra reweighting passes after each acceptance.
    #[arg(long)]
    refine_steps: Option<usize>,
}

impl SelectorArgs {
    fn config(&self) -> Result<SelectorConfig> {
        let mut cfg = SelectorConfig::default();
        if let Some(m) = self.subsample_m {
            cfg.subsample = m;
        }
        if let Some(v) = self.w0 {
            cfg.initial_wealth = v;
        }
        if let Some(v) = self.dw {
            cfg.payout = v;
        }
        if let Some(v) = self.c_tukey {
            cfg.robustness.c_tukey = v;
        }
        if let Some(v) = self.c_huber {
            cfg.robustness.c_huber = v;
        }
        if let Some(v) = self.refine_steps {
            cfg.robustness.refine_steps = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| robust_vif::Error::InvalidConfig(format!("delimiter `{c}` is not ASCII")))
}

fn load(input: &Input) -> Result<Dataset> {
    let options = IngestOptions {
        delimiter: if input.tab { b'\t' } else { delimiter_byte(input.delimiter)? },
        ..IngestOptions::default()
    };
    let ingested = data::ingest(&input.data, &input.response, &options)?;
    info!(
        "read {} rows, dropped {} with missing values",
        ingested.rows_read, ingested.rows_dropped
    );
    for (source, dummies) in &ingested.dummies {
        info!("`{source}` coded as {} dummies", dummies.len());
    }
    let mut dataset = ingested.dataset;
    if input.interactions {
        let before = dataset.p();
        dataset = data::expand_interactions(&dataset);
        info!("interactions: {} -> {} columns", before, dataset.p());
    }
    Ok(dataset)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Select {
            input,
            selector,
            trace,
        } => {
            let data = load(&input)?;
            let cfg = selector.config()?;
            let reports = selector
                .method
                .iter()
                .map(|&m| cv::model_report(&data, m, &cfg, input.standardize, selector.seed))
                .collect::<Result<Vec<_>>>()?;
            if let Some(path) = trace {
                let mut w = csv::Writer::from_path(path)?;
                for r in &reports {
                    report::write_trace_rows(&mut w, &r.method.to_string(), &r.trace, &data.names)?;
                }
                w.flush()?;
            }
            let text: String = reports.iter().map(report::model_table).collect::<Vec<_>>().join("\n");
            report::write_report(open_output(input.output.as_deref())?, &text, &reports)
        }
        Command::Cv {
            input,
            selector,
            folds,
            metric,
        } => {
            let data = load(&input)?;
            let cfg = selector.config()?;
            let spec = CvSpec {
                folds,
                seed: selector.seed,
                metric,
                standardize: input.standardize,
            };
            let reports = selector
                .method
                .iter()
                .map(|&m| cv::cross_validate(&data, m, &cfg, &spec))
                .collect::<Result<Vec<_>>>()?;
            let text: String = reports.iter().map(report::model_table).collect::<Vec<_>>().join("\n");
            report::write_report(open_output(input.output.as_deref())?, &text, &reports)
        }
        Command::Stability {
            input,
            selector,
            orders,
        } => {
            let data = load(&input)?;
            let cfg = selector.config()?;
            let reports = selector
                .method
                .iter()
                .map(|&m| cv::order_stability(&data, m, &cfg, input.standardize, orders, selector.seed))
                .collect::<Result<Vec<_>>>()?;
            let text: String = reports.iter().map(report::stability_table).collect::<Vec<_>>().join("\n");
            report::write_report(open_output(input.output.as_deref())?, &text, &reports)
        }
        Command::Simulate {
            config,
            replications,
            seed,
            output,
            details,
            delimiter,
        } => {
            let file = ExperimentFile::load(&config)?;
            let mut summaries = Vec::new();
            let mut results = Vec::new();
            for mut spec in file.experiment {
                if let Some(r) = replications {
                    spec.replications = r;
                }
                if let Some(s) = seed {
                    spec.seed = s;
                }
                info!("running `{}` with {} replications", spec.name, spec.replications);
                let res = sim::run_experiment(&spec, &file.methods, &file.selector)?;
                summaries.extend(res.summaries.iter().cloned());
                results.push(res);
            }
            sim::write_table(open_output(output.as_deref())?, &summaries, delimiter_byte(delimiter)?)?;
            if let Some(path) = details {
                serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &results)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
