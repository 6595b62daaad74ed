use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ineqsurvey::censoring::DomainConfig;
use ineqsurvey::data_model::{ComponentCount, DesignKind};
use ineqsurvey::gibbs::VarianceMode;
use ineqsurvey::indices::SummarySpec;
use ineqsurvey::inference::RegionKind;
use ineqsurvey::io;
use ineqsurvey::pipeline::{self, RunOptions, ValidateOptions};
use ineqsurvey::synth::{BracketMode, GeneratorConfig};
use ineqsurvey::{Error, Result};

/// Environment variable that supplies the output directory when `--out`
/// is not given.
const OUT_DIR_ENV: &str = "INEQSURVEY_OUT_DIR";

/// Exit status when `validate` finds failing rows.
const EXIT_VALIDATE_FAILED: u8 = 1;

#[derive(Parser)]
#[command(
    name = "ineqsurvey",
    version,
    about = "Inequality indices from interval-censored survey wealth data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset and check every household's censoring domain.
    Ingest {
        dataset: PathBuf,
        #[command(flatten)]
        domain: DomainArgs,
        #[arg(long, value_parser = parse_components)]
        components: Option<ComponentCount>,
    },
    /// Run the sampler and write report, sweep log, running means and manifest.
    Estimate {
        dataset: PathBuf,
        /// Output directory (default: $INEQSURVEY_OUT_DIR, then the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate a synthetic population, draw a survey sample and write the
    /// dataset together with the population truth.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Random when omitted; the value used is written to truth.json.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_components, default_value = "5")]
        components: ComponentCount,
        #[arg(long, value_enum, default_value = "stratified")]
        design: DesignArg,
        /// `survey`, `point`, or `relative:R` for brackets [x(1-R), x(1+R)].
        #[arg(long, value_parser = parse_brackets, default_value = "survey")]
        brackets: BracketMode,
        #[arg(long, default_value_t = GeneratorConfig::default().population_size)]
        population: usize,
        /// Expected number of responding households.
        #[arg(long, default_value_t = GeneratorConfig::default().target_sample)]
        sample: usize,
    },
    /// Compare reports against truth files in one or more replicate
    /// directories (each holding dataset.jsonl, truth.json, report.json).
    Validate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Smallest fraction of replicates whose region must cover the truth.
        #[arg(long, default_value_t = 0.7)]
        min_coverage: f64,
        /// Largest acceptable absolute prediction error.
        #[arg(long)]
        max_abs_error: Option<f64>,
        /// Also write the table as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DomainArgs {
    /// Upper bound replacing open-ended brackets.
    #[arg(long, default_value_t = DomainConfig::default().cap)]
    cap: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Total number of sweeps per chain.
    #[arg(long, default_value_t = RunOptions::default().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = RunOptions::default().burn_in)]
    burn_in: usize,
    /// Random when omitted; the value used is written to the manifest.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// One minus the posterior region level.
    #[arg(long, default_value_t = RunOptions::default().alpha)]
    alpha: f64,
    /// Comma-separated list such as `gini,theil,atkinson:1.5,quantile:0.9,ratio:0.9/0.1`.
    #[arg(long, value_delimiter = ',', value_parser = parse_summary)]
    summaries: Option<Vec<SummarySpec>>,
    #[arg(long, value_enum, default_value = "linearization")]
    variance_mode: VarianceArg,
    #[arg(long, value_enum, default_value = "equal-tailed")]
    region: RegionArg,
    #[arg(long, value_parser = parse_components)]
    components: Option<ComponentCount>,
    #[command(flatten)]
    domain: DomainArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Srswor,
    Stratified,
    Pps,
    TwoStage,
}

impl From<DesignArg> for DesignKind {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Srswor => DesignKind::Srswor,
            DesignArg::Stratified => DesignKind::StratifiedSrs,
            DesignArg::Pps => DesignKind::UnequalProbFixedSize,
            DesignArg::TwoStage => DesignKind::TwoStageCluster,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    Linearization,
    Jackknife,
    FastApprox,
}

impl From<VarianceArg> for VarianceMode {
    fn from(v: VarianceArg) -> Self {
        match v {
            VarianceArg::Linearization => VarianceMode::Linearization,
            VarianceArg::Jackknife => VarianceMode::Jackknife,
            VarianceArg::FastApprox => VarianceMode::FastApprox,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionArg {
    EqualTailed,
    Hpd,
}

fn parse_components(s: &str) -> std::result::Result<ComponentCount, String> {
    let n: usize = s.parse().map_err(|_| format!("expected 4 or 5, got {s:?}"))?;
    ComponentCount::from_len(n).map_err(|e| e.to_string())
}

fn parse_summary(s: &str) -> std::result::Result<SummarySpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_brackets(s: &str) -> std::result::Result<BracketMode, String> {
    match s.split_once(':') {
        None if s == "survey" => Ok(BracketMode::Survey),
        None if s == "point" => Ok(BracketMode::Point),
        Some(("relative", r)) => r
            .parse::<f64>()
            .map(BracketMode::Relative)
            .map_err(|_| format!("bad ratio {r:?}")),
        _ => Err(format!("expected survey, point or relative:R, got {s:?}")),
    }
}

fn domain_config(args: &DomainArgs) -> DomainConfig {
    DomainConfig {
        cap: args.cap,
        ..DomainConfig::default()
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run_options(args: RunArgs) -> RunOptions {
    RunOptions {
        iterations: args.iterations,
        burn_in: args.burn_in,
        seed: args.seed.unwrap_or_else(rand::random),
        chains: args.chains,
        alpha: args.alpha,
        region: match args.region {
            RegionArg::EqualTailed => RegionKind::EqualTailed,
            RegionArg::Hpd => RegionKind::Hpd,
        },
        summaries: args.summaries.unwrap_or_else(SummarySpec::default_set),
        variance_mode: args.variance_mode.into(),
        domain: domain_config(&args.domain),
        components: args.components,
        ..RunOptions::default()
    }
}

/// Returns `Ok(false)` when validation ran but some rows failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest {
            dataset,
            domain,
            components,
        } => {
            let loaded = io::ingest(&dataset, &domain_config(&domain), components)?;
            let ds = &loaded.dataset;
            let mut counts = [0usize; 8];
            for r in &ds.records {
                counts[r.holdings.pattern() - 1] += 1;
            }
            println!("households  {}", ds.len());
            println!("components  {}", ds.components);
            println!("design      {:?}", ds.design.kind);
            println!("sha256      {}", loaded.hash);
            for (p, c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
                println!("pattern {}   {c}", p + 1);
            }
            Ok(true)
        }
        Command::Estimate { dataset, out, run } => {
            let started = io::unix_now();
            let opts = run_options(run);
            opts.chain_config().validate()?;
            let est = pipeline::estimate_file(&dataset, &opts)?;
            let dir = out_dir(out);
            pipeline::write_run(&dir, &est, started)?;
            print!("{}", est.report.to_table());
            for r in est.report.rows.iter().filter(|r| !r.warnings.is_empty()) {
                for w in &r.warnings {
                    eprintln!("warning: {}: {w}", r.label);
                }
            }
            eprintln!("seed {} ; outputs in {}", opts.seed, dir.display());
            Ok(true)
        }
        Command::Simulate {
            out,
            seed,
            components,
            design,
            brackets,
            population,
            sample,
        } => {
            let config = GeneratorConfig {
                population_size: population,
                target_sample: sample,
                components,
                design: design.into(),
                brackets,
                ..GeneratorConfig::default()
            };
            config.validate()?;
            let seed = seed.unwrap_or_else(rand::random);
            let dir = out_dir(out);
            let truth = pipeline::simulate_to_dir(&dir, &config, seed)?;
            println!("seed        {seed}");
            println!("population  {}", truth.population_size);
            println!("sample      {}", truth.sample_size);
            for t in &truth.rows {
                println!("{:<16} {}", t.summary.display_name(), t.value);
            }
            Ok(true)
        }
        Command::Validate {
            dirs,
            min_coverage,
            max_abs_error,
            json,
        } => {
            let table = pipeline::validate_replicates(
                &dirs,
                &ValidateOptions {
                    min_coverage,
                    max_abs_error,
                },
            )?;
            print!("{}", table.to_table());
            if let Some(path) = json {
                io::write_json(&table, &path)?;
            }
            Ok(table.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATE_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
