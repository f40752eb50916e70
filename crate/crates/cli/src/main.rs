//! `loocusum` command-line front end.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use loocusum::density::{BandwidthPolicy, Kernel};
use loocusum::detect::{BandwidthMode, DetectorKind};

use config::{Check, Command, Gaussian, Post, RunConfig, Thresholds, VerifyConfig, SEED_ENV};

/// Exit statuses; part of the command-line contract.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const IO: u8 = 3;
    pub const RATE: u8 = 4;
    pub const VERIFY: u8 = 5;
    pub const NO_ALARM: u8 = 10;
}

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, flags, or input data.
    Parse(anyhow::Error),
    Io(anyhow::Error),
    Rate(anyhow::Error),
    Verify(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => exit::PARSE,
            Failure::Io(_) => exit::IO,
            Failure::Rate(_) => exit::RATE,
            Failure::Verify(_) => exit::VERIFY,
            Failure::Other(_) => exit::OTHER,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Parse(e) | Failure::Io(e) | Failure::Rate(e) | Failure::Other(e) => {
                write!(f, "{e:#}")
            }
            Failure::Verify(s) => f.write_str(s),
        }
    }
}

/// Library errors from a command body: rate violations keep their own status,
/// invalid arguments count as configuration errors.
impl From<loocusum::Error> for Failure {
    fn from(e: loocusum::Error) -> Self {
        use loocusum::Error as E;
        match e {
            E::RateViolation(_) => Failure::Rate(e.into()),
            E::Domain(_) | E::Precondition(_) | E::DegenerateWindow { .. } => Failure::Parse(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

pub enum Outcome {
    Success,
    NoAlarm,
}

#[derive(Parser, Debug)]
#[command(name = "loocusum", version, about = "Leave-one-out CuSum change detection")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Master seed (default: $LOOCUSUM_SEED, then a built-in value).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path, `-` for standard output.
    #[arg(long, short, global = true)]
    output: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Comma-separated: cusum, wl-glr, loo-cusum.
    #[arg(long, global = true, value_delimiter = ',')]
    detector: Option<Vec<DetectorKind>>,
    /// Comma-separated window sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    window: Option<Vec<usize>>,
    /// Window policy constant f > 1.
    #[arg(long, global = true)]
    window_f: Option<f64>,
    #[arg(long, global = true)]
    kl_lower_bound: Option<f64>,
    #[arg(long, global = true)]
    trials: Option<u64>,
    #[arg(long, global = true)]
    delay_trials: Option<u64>,
    #[arg(long, global = true)]
    mtfa_max_steps: Option<u64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pre_mean: Option<f64>,
    #[arg(long, global = true)]
    pre_var: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    post_mean: Option<f64>,
    #[arg(long, global = true)]
    post_var: Option<f64>,
    /// Treat the post-change density as unknown (LOO-CuSum and WL-GLR only).
    #[arg(long, global = true, conflicts_with_all = ["post_mean", "post_var"])]
    post_unknown: bool,
    /// gaussian or epanechnikov.
    #[arg(long, global = true, value_parser = parse_kernel)]
    kernel: Option<Kernel>,
    /// Fixed bandwidth instead of the (min(n, m) - 1)^(-1/5) rule.
    #[arg(long, global = true)]
    bandwidth: Option<f64>,
    /// per-segment or per-time.
    #[arg(long, global = true, value_parser = parse_mode)]
    bandwidth_mode: Option<BandwidthMode>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one detector over a newline-delimited stream.
    Detect {
        /// Input file, `-` for standard input.
        #[arg(long)]
        input: Option<String>,
        /// Alarm threshold (default: derived from alpha).
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        /// Write `time,observation,statistic` rows to this path.
        #[arg(long)]
        trace: Option<String>,
    },
    /// Monte Carlo operating characteristics as CSV.
    Sweep {
        /// Comma-separated ascending thresholds (default: automatic grid).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        thresholds: Option<Vec<f64>>,
        /// Change point of the delay runs.
        #[arg(long)]
        change_point: Option<u64>,
    },
    /// MISE and KL-loss of the leave-one-out estimator, with fitted rates.
    DiagnoseDensity {
        /// Comma-separated increasing sample sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Run the false-alarm, delay-slope, and matched-MTFA checks.
    Verify {
        /// Seconds-scale preset: alpha 0.5, window 2, false-alarm check only.
        #[arg(long)]
        smoke: bool,
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<Check>>,
        #[arg(long)]
        target_mtfa: Option<f64>,
        #[arg(long)]
        compare_window: Option<usize>,
        /// Shift added to b_alpha in the false-alarm check (debugging only).
        #[arg(long, hide = true, allow_hyphen_values = true)]
        threshold_offset: Option<f64>,
    },
}

fn parse_kernel(s: &str) -> Result<Kernel, String> {
    match s {
        "gaussian" => Ok(Kernel::Gaussian),
        "epanechnikov" => Ok(Kernel::Epanechnikov),
        _ => Err(format!("unknown kernel '{s}'")),
    }
}

fn parse_mode(s: &str) -> Result<BandwidthMode, String> {
    match s {
        "per-segment" => Ok(BandwidthMode::PerSegment),
        "per-time" => Ok(BandwidthMode::PerTime),
        _ => Err(format!("unknown bandwidth mode '{s}'")),
    }
}

fn load(cli: &Cli) -> Result<(Command, RunConfig), Failure> {
    let (mut cfg, file_seed) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map_err(Failure::Io)?;
            let cfg = RunConfig::from_toml(&text).map_err(Failure::Parse)?;
            let has_seed = text
                .parse::<toml::Table>()
                .is_ok_and(|t| t.contains_key("seed"));
            (cfg, has_seed)
        }
        None => (RunConfig::default(), false),
    };
    // the environment replaces the built-in seed, never a configured one
    if !file_seed {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))
                .map_err(Failure::Parse)?;
        }
    }
    let command = match &cli.command {
        Cmd::Detect { .. } => Command::Detect,
        Cmd::Sweep { .. } => Command::Sweep,
        Cmd::DiagnoseDensity { .. } => Command::DiagnoseDensity,
        Cmd::Verify { .. } => Command::Verify,
    };
    if let Cmd::Verify { smoke: true, .. } = cli.command {
        cfg.alpha = 0.5;
        cfg.windows = Some(vec![2]);
        cfg.trials = Some(500);
        cfg.verify = VerifyConfig::smoke();
    }

    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(cfg.seed, cli.seed);
    set!(cfg.output, cli.output);
    set!(cfg.alpha, cli.alpha);
    set!(cfg.window_f, cli.window_f);
    set!(cfg.delay_trials, cli.delay_trials);
    set!(cfg.kernel, cli.kernel);
    set!(cfg.bandwidth_mode, cli.bandwidth_mode);
    if cli.detector.is_some() {
        cfg.detectors = cli.detector.clone();
    }
    if cli.window.is_some() {
        cfg.windows = cli.window.clone();
    }
    if cli.kl_lower_bound.is_some() {
        cfg.kl_lower_bound = cli.kl_lower_bound;
    }
    if cli.trials.is_some() {
        cfg.trials = cli.trials;
    }
    if cli.mtfa_max_steps.is_some() {
        cfg.mtfa_max_steps = cli.mtfa_max_steps;
    }
    if let Some(h) = cli.bandwidth {
        cfg.bandwidth = BandwidthPolicy::Fixed(h);
    }
    set!(cfg.pre.mean, cli.pre_mean);
    set!(cfg.pre.variance, cli.pre_var);
    if cli.post_unknown {
        cfg.post = Post::Unknown(config::Unknown::Unknown);
    } else if cli.post_mean.is_some() || cli.post_var.is_some() {
        let mut g = match cfg.post {
            Post::Known(g) => g,
            Post::Unknown(_) => Gaussian {
                mean: cfg.pre.mean,
                variance: cfg.pre.variance,
            },
        };
        set!(g.mean, cli.post_mean);
        set!(g.variance, cli.post_var);
        cfg.post = Post::Known(g);
    }
    match &cli.command {
        Cmd::Detect {
            input,
            threshold,
            trace,
        } => {
            set!(cfg.input, input);
            if let Some(b) = threshold {
                cfg.thresholds = Thresholds::List(vec![*b]);
            }
            if trace.is_some() {
                cfg.trace = trace.clone();
            }
        }
        Cmd::Sweep {
            thresholds,
            change_point,
        } => {
            if let Some(list) = thresholds {
                cfg.thresholds = Thresholds::List(list.clone());
            }
            set!(cfg.change_point, change_point);
        }
        Cmd::DiagnoseDensity { sizes } => set!(cfg.sizes, sizes),
        Cmd::Verify {
            checks,
            target_mtfa,
            compare_window,
            threshold_offset,
            ..
        } => {
            set!(cfg.verify.checks, checks);
            set!(cfg.verify.target_mtfa, target_mtfa);
            set!(cfg.verify.compare_window, compare_window);
            set!(cfg.verify.threshold_offset, threshold_offset);
        }
    }
    cfg.resolve(command).map_err(Failure::Parse)?;
    Ok((command, cfg))
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    let (command, cfg) = load(cli)?;
    if cli.dump_config {
        let text = cfg.to_toml().map_err(Failure::Other)?;
        let mut out = output::open(&cfg.output)?;
        out.write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .context("cannot write configuration")
            .map_err(Failure::Io)?;
        return Ok(Outcome::Success);
    }
    log::info!("running {command:?} with seed {}", cfg.seed);
    match command {
        Command::Detect => commands::detect(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::DiagnoseDensity => commands::diagnose_density(&cfg),
        Command::Verify => commands::verify(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Success) => ExitCode::from(exit::OK),
        Ok(Outcome::NoAlarm) => ExitCode::from(exit::NO_ALARM),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
