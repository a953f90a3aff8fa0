//! Command-line driver for fbmlab: subcommand dispatch, output files and
//! reproducibility manifests.

pub mod commands;
pub mod grids;
pub mod manifest;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use manifest::{replay, Manifest, ReplayOutcome, MANIFEST_SCHEMA_VERSION};

/// Environment variable read for the default worker count.
pub const THREADS_ENV: &str = "FBMLAB_THREADS";

/// Exit codes returned by [`dispatch`].
pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const INVALID: i32 = 2;
    pub const MISMATCH: i32 = 3;
}

#[derive(Parser, Debug, Clone)]
#[command(
    name = "fbmlab",
    version,
    about = "Fractional Brownian motion experiments with reproducible manifests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads; defaults to $FBMLAB_THREADS, then the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Root seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; a manifest is written next to it as `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    #[command(flatten)]
    Run(Experiment),
    /// Re-run a manifest and compare output checksums.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Directory for the regenerated files (default: `replay/` beside the manifest).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Cholesky,
    Volterra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Euler,
    Heun,
}

impl From<SchemeArg> for fbmlab::sde::Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => fbmlab::sde::Scheme::Euler,
            SchemeArg::Heun => fbmlab::sde::Scheme::Heun,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Weak,
    Strong,
}

impl From<ModeArg> for fbmlab::hormander::BracketMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Weak => fbmlab::hormander::BracketMode::Weak,
            ModeArg::Strong => fbmlab::hormander::BracketMode::Strong,
        }
    }
}

/// The recordable part of a run: everything except seed, threads and paths.
#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Sample fractional Brownian paths
    #[command(subcommand)]
    Fbm(FbmCommand),
    /// Solve an SDE driven by fBm
    #[command(subcommand)]
    Sde(SdeCommand),
    /// Fractional calculus checks on the Cameron-Martin space
    #[command(subcommand)]
    Frac(FracCommand),
    /// Malliavin matrix and its inverse moments
    #[command(subcommand)]
    Malliavin(MalliavinCommand),
    /// Small-ball sweeps for the Norris-type lemma
    #[command(subcommand)]
    Norris(NorrisCommand),
    /// Bracket-generating flag and growth vector
    #[command(subcommand)]
    Hormander(HormanderCommand),
    /// Small-time density exponent
    #[command(subcommand)]
    Smalltime(SmalltimeCommand),
}

impl Experiment {
    /// `module action`, e.g. `fbm sample`.
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Fbm(FbmCommand::Sample(_)) => "fbm sample",
            Experiment::Sde(SdeCommand::Solve(_)) => "sde solve",
            Experiment::Frac(FracCommand::CheckReprh(_)) => "frac check-reprh",
            Experiment::Malliavin(MalliavinCommand::Gamma(_)) => "malliavin gamma",
            Experiment::Malliavin(MalliavinCommand::Probe(_)) => "malliavin probe",
            Experiment::Norris(NorrisCommand::Sweep(_)) => "norris sweep",
            Experiment::Hormander(HormanderCommand::Check(_)) => "hormander check",
            Experiment::Smalltime(SmalltimeCommand::Exponent(_)) => "smalltime exponent",
        }
    }

    pub fn default_format(&self) -> Format {
        match self {
            Experiment::Fbm(_) | Experiment::Sde(_) => Format::Csv,
            _ => Format::Json,
        }
    }

    pub fn default_out(&self, format: Format) -> PathBuf {
        PathBuf::from(format!(
            "{}.{}",
            self.name().replace(' ', "-"),
            format.extension()
        ))
    }
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FbmCommand {
    /// Sample fBm paths on a uniform grid.
    Sample(FbmSampleArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmSampleArgs {
    #[arg(long)]
    pub hurst: f64,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Cholesky)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeCommand {
    /// Solve a polynomial SDE along sampled fBm drivers.
    Solve(SdeSolveArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeSolveArgs {
    /// System JSON file or catalogue name.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub hurst: f64,
    #[arg(long, default_value_t = 256)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::Euler)]
    pub scheme: SchemeArg,
    /// Starting point, overriding the system's `x0`.
    #[arg(long)]
    pub x0: Option<String>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FracCommand {
    /// Compare the kernel and fractional-integral forms of the H inner product.
    CheckReprh(ReprhArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprhArgs {
    #[arg(long)]
    pub hurst: f64,
    #[arg(long, default_value_t = 1024)]
    pub steps: usize,
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MalliavinCommand {
    /// Malliavin matrix of the solution at the horizon, one driver.
    Gamma(GammaArgs),
    /// Small-eigenvalue probabilities of the reduced matrix.
    Probe(ProbeArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub hurst: f64,
    #[arg(long, default_value_t = 256)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::Heun)]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub x0: Option<String>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub hurst: f64,
    #[arg(long, default_value_t = 128)]
    pub steps: usize,
    /// Decreasing epsilon grid.
    #[arg(long, default_value = "1e-1,1e-2,1e-3")]
    pub eps: String,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Random unit directions added to the coordinate axes.
    #[arg(long, default_value_t = 8)]
    pub random_directions: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::Heun)]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub x0: Option<String>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NorrisCommand {
    /// Joint small-ball sweep over (q, eps).
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub hurst: f64,
    #[arg(long, default_value = "1e-1:1e-3:log")]
    pub eps: String,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// pure-noise, pure-drift, degenerate or pullback.
    #[arg(long, default_value = "pullback")]
    pub scenario: String,
    #[arg(long, default_value_t = fbmlab::norris::DEFAULT_SWEEP_STEPS)]
    pub steps: usize,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HormanderCommand {
    /// Bracket span test and canonical flag at a point.
    Check(CheckArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckArgs {
    /// System JSON file or catalogue name.
    #[arg(long)]
    pub fields: String,
    /// Defaults to the system's `x0`, then the origin.
    #[arg(long)]
    pub point: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub max_level: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Weak)]
    pub mode: ModeArg,
    /// Radius of the neighbourhood sampled by the regular-point test.
    #[arg(long, default_value_t = 1e-2)]
    pub radius: f64,
    #[arg(long, default_value_t = 32)]
    pub neighbours: usize,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmalltimeCommand {
    /// Fit the small-time decay exponent of the density at the start point.
    Exponent(ExponentArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentArgs {
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub hurst: f64,
    #[arg(long, default_value = "0.02:0.5:8log")]
    pub tgrid: String,
    #[arg(long, default_value_t = 200_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::Heun)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    #[arg(long)]
    pub x0: Option<String>,
}

/// Input that fails validation before or during a run (exit code 2).
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn is_invalid_input(err: &anyhow::Error) -> bool {
    use fbmlab::Error as E;
    err.chain().any(|cause| {
        cause.is::<InvalidInput>()
            || matches!(
                cause.downcast_ref::<E>(),
                Some(
                    E::InvalidHurst(_)
                        | E::Domain(_)
                        | E::Precondition(_)
                        | E::IncompatibleScale(_)
                        | E::InvalidSystem(_)
                        | E::LevelTooLarge { .. }
                        | E::TooManyWords { .. }
                        | E::Json(_)
                )
            )
    })
}

/// Machine-readable diagnostic printed to stderr on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub status: String,
    pub kind: String,
    pub message: String,
    pub causes: Vec<String>,
}

impl Diagnostic {
    fn from_error(kind: &str, err: &anyhow::Error) -> Self {
        Self {
            status: "error".into(),
            kind: kind.into(),
            message: err.to_string(),
            causes: err.chain().skip(1).map(|c| c.to_string()).collect(),
        }
    }
}

fn emit(diag: &Diagnostic) {
    eprintln!(
        "{}",
        serde_json::to_string(diag).expect("diagnostics serialise")
    );
}

/// Worker count: explicit flag, then the environment, then rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> anyhow::Result<usize> {
    if let Some(n) = flag {
        if n == 0 {
            return Err(InvalidInput("--threads must be at least 1".into()).into());
        }
        return Ok(n);
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| InvalidInput(format!("{THREADS_ENV}='{v}' is not a positive integer")))?;
        if n > 0 {
            return Ok(n);
        }
    }
    Ok(std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1))
}

/// A finished run: the manifest written and where it lives.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

/// Run one experiment on a private pool of `threads` workers and write its
/// outputs and manifest.
pub fn run_experiment(
    experiment: &Experiment,
    seed: u64,
    format: Option<Format>,
    out: Option<&Path>,
    threads: usize,
    argv: &[String],
) -> anyhow::Result<RunOutcome> {
    let format = format.unwrap_or_else(|| experiment.default_format());
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| experiment.default_out(format));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;
    let started = std::time::SystemTime::now();
    let clock = std::time::Instant::now();
    let mut resolved = experiment.clone();
    let result = pool.install(|| commands::execute(&mut resolved, seed, format, &out))?;
    let elapsed = clock.elapsed();
    let outputs = result
        .artifacts
        .iter()
        .map(|a| a.write())
        .collect::<anyhow::Result<Vec<_>>>()?;
    let manifest = Manifest::new(
        argv.to_vec(),
        resolved,
        seed,
        format,
        threads,
        &out,
        outputs,
        result.inputs,
        manifest::Timing::new(started, elapsed),
        result.warnings,
    );
    let manifest_path = manifest::manifest_path(&out);
    manifest.write(&manifest_path)?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
    })
}

fn run(cli: Cli, argv: &[String]) -> anyhow::Result<i32> {
    let threads = resolve_threads(cli.threads)?;
    match cli.command {
        Command::Run(experiment) => {
            let outcome = run_experiment(
                &experiment,
                cli.seed,
                cli.format,
                cli.out.as_deref(),
                threads,
                argv,
            )?;
            for w in &outcome.manifest.warnings {
                log::warn!("{w}");
            }
            println!("{}", outcome.manifest_path.display());
            Ok(exit::OK)
        }
        Command::Replay(args) => {
            let outcome = replay(
                &args.manifest,
                args.out_dir.as_deref(),
                cli.threads.map(|_| threads),
            )?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
            Ok(if outcome.identical {
                exit::OK
            } else {
                exit::MISMATCH
            })
        }
    }
}

/// Parse `argv` (program name first), run the command and return the exit code.
pub fn dispatch<S: AsRef<str>>(argv: &[S]) -> i32 {
    let argv: Vec<String> = argv.iter().map(|s| s.as_ref().to_string()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return exit::OK;
            }
            emit(&Diagnostic {
                status: "error".into(),
                kind: "usage".into(),
                message: e.kind().to_string(),
                causes: vec![e.render().to_string().trim().to_string()],
            });
            return exit::INVALID;
        }
    };
    match run(cli, &argv) {
        Ok(code) => code,
        Err(err) => {
            let (kind, code) = if is_invalid_input(&err) {
                ("validation", exit::INVALID)
            } else {
                ("runtime", exit::RUNTIME)
            };
            emit(&Diagnostic::from_error(kind, &err));
            code
        }
    }
}
