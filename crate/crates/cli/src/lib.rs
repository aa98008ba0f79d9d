//! Command-line driver: config loading, subcommands, manifests and plot data.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qnnguard::Execution;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult, EXIT_USAGE};
use crate::output::{config_hash, unix_ms, OutputDir, RunManifest, MANIFEST_FILE};

pub const JOBS_ENV: &str = "QNNGUARD_JOBS";

#[derive(Debug, Parser)]
#[command(
    name = "qnnguard",
    version,
    about = "Quantize, protect and fault-test neural network weights"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a float model to `bitwidth` bits.
    Quantize(CommonArgs),
    /// Pack weights into protected memory words.
    Protect(CommonArgs),
    /// Flip bits in a protected image once.
    Inject(CommonArgs),
    /// Run a Monte-Carlo fault campaign.
    Campaign(CommonArgs),
    /// Sweep a design grid and compute the Pareto front.
    Explore(CommonArgs),
    /// Tabulate accuracy against bit error rate from result files.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides every master seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (falls back to $QNNGUARD_JOBS, then the core count).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Quantize(_) => "quantize",
            Command::Protect(_) => "protect",
            Command::Inject(_) => "inject",
            Command::Campaign(_) => "campaign",
            Command::Explore(_) => "explore",
            Command::Report(_) => "report",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Quantize(a)
            | Command::Protect(a)
            | Command::Inject(a)
            | Command::Campaign(a)
            | Command::Explore(a)
            | Command::Report(a) => a,
        }
    }
}

/// `--jobs`, then `$QNNGUARD_JOBS`, then the available parallelism.
pub fn resolve_jobs(flag: Option<u64>, env: Option<&str>) -> CliResult<usize> {
    if let Some(j) = flag {
        return Ok(j as usize);
    }
    if let Some(v) = env {
        return match v.trim().parse::<usize>() {
            Ok(j) if j >= 1 => Ok(j),
            _ => Err(CliError::config(
                JOBS_ENV,
                format!("expected a positive integer, got {v:?}"),
            )),
        };
    }
    Ok(std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1))
}

fn input_paths(lc: &LoadedConfig) -> Vec<PathBuf> {
    let c = &lc.config;
    let mut v: Vec<PathBuf> = [&c.model, &c.weights, &c.dataset]
        .into_iter()
        .flatten()
        .map(|p| lc.resolve(p))
        .collect();
    for p in [&c.quantized, &c.protected].into_iter().flatten() {
        let h = lc.resolve(p);
        v.push(config::blob_path(&h));
        v.push(h);
    }
    v.extend(c.inputs.iter().map(|p| lc.resolve(p)));
    v
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn master_seed(lc: &LoadedConfig) -> Option<u64> {
    let c = &lc.config;
    c.explore
        .as_ref()
        .map(|e| e.campaign.master_seed)
        .or(c.campaign.as_ref().map(|c| c.fault.master_seed))
        .or(c.fault.as_ref().map(|f| f.master_seed))
}

/// Runs one subcommand to completion and returns the manifest it wrote.
pub fn execute(command: &Command, jobs_env: Option<&str>) -> CliResult<RunManifest> {
    let started = unix_ms();
    let args = command.args();
    let mut lc = LoadedConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        lc.apply_seed(seed);
    }
    let jobs = resolve_jobs(args.jobs, jobs_env)?;
    let mut out = OutputDir::create(&args.out)?;

    let run = |out: &mut OutputDir| -> CliResult<Vec<String>> {
        let exec = if jobs > 1 {
            Execution::default()
        } else {
            Execution::Sequential
        };
        let mut ctx = commands::Ctx {
            lc: &lc,
            out,
            exec,
            warnings: Vec::new(),
        };
        match command {
            Command::Quantize(_) => commands::quantize(&mut ctx)?,
            Command::Protect(_) => commands::protect(&mut ctx)?,
            Command::Inject(_) => commands::inject(&mut ctx)?,
            Command::Campaign(_) => commands::campaign(&mut ctx)?,
            Command::Explore(_) => commands::explore(&mut ctx)?,
            Command::Report(_) => commands::report(&mut ctx)?,
        }
        Ok(ctx.warnings)
    };

    // inputs are never overwritten
    let out_root = out.root().to_path_buf();
    let clobbered = input_paths(&lc).into_iter().find(|p| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        OUTPUT_NAMES.contains(&name) && p.parent().is_some_and(|d| same_file(d, &out_root))
    });
    if let Some(p) = clobbered {
        return Err(CliError::Other(format!(
            "input {} would be overwritten by this run's outputs",
            p.display()
        )));
    }

    let warnings = with_pool(jobs, || run(&mut out))??;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let manifest = RunManifest {
        tool: "qnnguard",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: command.name().to_string(),
        config_sha256: config_hash(&lc.config),
        config: lc.config.clone(),
        master_seed: master_seed(&lc),
        jobs,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs: out.written().to_vec(),
        warnings,
    };
    out.write_json(MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

/// File names any subcommand may write at the top of the output directory.
const OUTPUT_NAMES: &[&str] = &[
    "quantized.json",
    "quantized.bin",
    "quantize_summary.json",
    "protected.json",
    "protected.bin",
    "protect_summary.json",
    "faulted.json",
    "faulted.bin",
    "inject_summary.json",
    "campaign.json",
    "campaign.csv",
    "report.csv",
    "points.json",
    "pareto.json",
    MANIFEST_FILE,
];

#[cfg(feature = "parallel")]
fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T: Send>(_jobs: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    Ok(f())
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
/// Errors go to stderr as one JSON object.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let jobs_env = std::env::var(JOBS_ENV).ok();
    match execute(&cli.command, jobs_env.as_deref()) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}", Path::new(&cli.command.args().out).join(o).display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
