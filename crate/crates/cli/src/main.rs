use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use nma_outlier::data::{load_dataset, smoking_cessation, write_dataset, DataFormat, NetworkDataset};
use nma_outlier::detection::{check_rhat, detect, DetectOptions, PredictiveMode};
use nma_outlier::downweight::{compare, standard_fit, ComparisonSummary, DownweightPlan};
use nma_outlier::error::NmaError;
use nma_outlier::harness::{run_experiment, ExperimentConfig};
use nma_outlier::marglik::BfEstimator;
use nma_outlier::mcmc::{derive_seed, SamplerConfig};
use nma_outlier::model::PriorConfig;
use nma_outlier::simgen::{generate, scenario};

#[derive(Parser)]
#[command(name = "nmaout", version, about = "Outlier detection and down-weighting for binomial network meta-analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Iterations per chain, burn-in included.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    burnin: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Marginal,
    Conditional,
}

#[derive(Args)]
struct DataArg {
    /// Arm-level CSV or JSON file; the bundled smoking-cessation network when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl DataArg {
    fn load(&self) -> Result<NetworkDataset> {
        match &self.data {
            Some(p) => load_dataset(p, DataFormat::from_path(p))
                .with_context(|| format!("loading {}", p.display())),
            None => Ok(smoking_cessation()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the standard random-effects model and summarise the posterior.
    Fit {
        #[command(flatten)]
        data: DataArg,
        /// Write the raw draws to this CSV file.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Per-study Bayes factors and posterior predictive p-values.
    Detect {
        #[command(flatten)]
        data: DataArg,
        /// Bayes factor estimator: sd (Savage-Dickey) or ss (stepping stone).
        #[arg(long, default_value = "sd")]
        estimator: String,
        #[arg(long, value_enum, default_value_t = Mode::Marginal)]
        mode: Mode,
        #[arg(long, default_value_t = 1.1)]
        rhat_limit: f64,
    },
    /// Full, down-weighted and exclusion fits side by side.
    Downweight {
        #[command(flatten)]
        data: DataArg,
        /// Comma-separated `study=prior`, prior being moderate, severe or a:b.
        #[arg(long)]
        plan: String,
    },
    /// Generate synthetic networks from the scenario grid.
    Simulate {
        #[arg(long)]
        scenario: usize,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Drop the induced outliers.
        #[arg(long)]
        null: bool,
        #[arg(long, default_value = "simulated")]
        output: PathBuf,
    },
    /// Run a simulation experiment and write table1/table2/bias CSVs.
    Bench {
        /// Scenario ids (repeat or comma-separate).
        #[arg(long, value_delimiter = ',', required = true)]
        scenario: Vec<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// 1000 replications of 50,000 iterations.
        #[arg(long)]
        paper_scale: bool,
        #[arg(long, default_value = "bench")]
        output: PathBuf,
        #[arg(long)]
        no_null: bool,
        /// Run only the uncontaminated variants.
        #[arg(long, conflicts_with = "no_null")]
        null_only: bool,
        #[arg(long)]
        no_downweight: bool,
        #[arg(long)]
        severity: Option<f64>,
    },
}

fn sampler(g: &Global, base: SamplerConfig) -> SamplerConfig {
    let mut cfg = base.with_seed(g.seed);
    if let Some(c) = g.chains {
        cfg.chains = c;
    }
    if let Some(i) = g.iters {
        cfg.iterations = i;
    }
    if let Some(b) = g.burnin {
        cfg.burn_in = b;
    }
    cfg
}

fn emit<T: Serialize>(format: Format, value: &T, csv: impl FnOnce() -> nma_outlier::error::Result<String>) -> Result<()> {
    match format {
        Format::Csv => print!("{}", csv()?),
        Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn summary_csv(s: &ComparisonSummary) -> nma_outlier::error::Result<String> {
    let mut out = String::from("contrast,or_median,ci_low,ci_high\n");
    for o in s.odds_ratios.iter().filter(|o| o.h < o.k) {
        out += &format!("{},{},{},{}\n", o.label, o.or.median, o.or.low, o.or.high);
    }
    out += &format!("tau2,{},{},{}\n", s.tau2.median, s.tau2.low, s.tau2.high);
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(t) = g.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::Fit { data, draws } => {
            let ds = data.load()?;
            let cfg = sampler(g, SamplerConfig::desk());
            let (samples, summary) = standard_fit(&ds, &PriorConfig::default(), &cfg)?;
            check_rhat(&samples, 1.1)?;
            if let Some(path) = draws {
                samples.write_csv(fs::File::create(path)?)?;
            }
            emit(g.format, &summary, || summary_csv(&summary))?;
        }
        Command::Detect { data, estimator, mode, rhat_limit } => {
            let ds = data.load()?;
            let cfg = sampler(g, SamplerConfig::desk());
            let mut opts = DetectOptions {
                estimator: estimator.parse::<BfEstimator>()?,
                rhat_limit: *rhat_limit,
                ..DetectOptions::default()
            };
            opts.ppc.mode = match mode {
                Mode::Marginal => PredictiveMode::Marginal,
                Mode::Conditional => PredictiveMode::Conditional,
            };
            let report = detect(&ds, &cfg, &opts)?;
            info!("flagged studies: {:?}", report.flagged());
            emit(g.format, &report, || report.to_csv())?;
        }
        Command::Downweight { data, plan } => {
            let ds = data.load()?;
            let plan = DownweightPlan::parse(plan, &ds)?;
            let cfg = sampler(g, SamplerConfig::desk());
            let cmp = compare(&ds, &plan, &PriorConfig::default(), &cfg)?;
            emit(g.format, &cmp, || cmp.to_csv())?;
        }
        Command::Simulate { scenario: id, reps, null, output } => {
            let mut sc = scenario(*id)?;
            if *null {
                sc = sc.null_variant();
            }
            fs::create_dir_all(output)?;
            for rep in 0..*reps {
                let net = generate(&sc.with_seed(derive_seed(g.seed, &[*id as u64, rep as u64])))?;
                let stem = format!("scenario_{id:02}_rep_{rep:04}");
                let (fmt, ext) = match g.format {
                    Format::Csv => (DataFormat::Csv, "csv"),
                    Format::Json => (DataFormat::Json, "json"),
                };
                write_dataset(&net.dataset, output.join(format!("{stem}.{ext}")), fmt)?;
                write_file(
                    &output.join(format!("{stem}.truth.json")),
                    &serde_json::to_string_pretty(&net)?,
                )?;
            }
            println!("wrote {reps} network(s) to {}", output.display());
        }
        Command::Bench { scenario, reps, paper_scale, output, no_null, null_only, no_downweight, severity } => {
            let mut cfg = ExperimentConfig::desk(scenario.clone(), output.clone());
            if *paper_scale {
                cfg = cfg.paper_scale();
            }
            cfg.mcmc = sampler(g, cfg.mcmc);
            cfg.seed = g.seed;
            if let Some(r) = reps {
                cfg.replications = *r;
            }
            cfg.null_runs = !no_null;
            cfg.contaminated_runs = !null_only;
            cfg.downweight = !no_downweight;
            cfg.severity = *severity;
            let result = run_experiment(&cfg)?;
            match g.format {
                Format::Csv => {
                    let table = if *null_only { "table2.csv" } else { "table1.csv" };
                    print!("{}", fs::read_to_string(output.join(table))?)
                }
                Format::Json => println!("{}", serde_json::to_string_pretty(&result)?),
            }
            if !result.failures.is_empty() {
                eprintln!("{} replication(s) failed; see failures.txt", result.failures.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let diagnostic = e
                .chain()
                .any(|c| c.downcast_ref::<NmaError>().is_some_and(NmaError::is_diagnostic));
            ExitCode::from(if diagnostic { 2 } else { 1 })
        }
    }
}
