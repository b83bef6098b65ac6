//! Command-line frontend: `run`, `sweep` and `gen-matrix-stats`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::gaussian::{ClipBounds, Interval};
use crate::harness::output::{
    write_cells_csv, write_matrix_stats_csv, write_minima_csv, write_trials_csv,
};
use crate::harness::{
    matrix_draws, run_grid, EnsembleSpec, GridSpec, ProfileScaling, Seeding, SupportModel,
    SweepOptions, SweepResult,
};
use crate::scalar::compensated_sum;
use crate::solver::{ClipPlacement, DampingCase, VarianceMode};

pub const OUT_DIR_ENV: &str = "FRACVAMP_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "fracvamp",
    version,
    about = "Damped and fractional VAMP / EC sparse recovery experiments",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve `trials` instances at a single (d, e) setting.
    Run(RunArgs),
    /// Grid sweep over damping and fractional parameters.
    Sweep(SweepArgs),
    /// Condition-number statistics of the sensing-matrix ensemble.
    GenMatrixStats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SupportArg {
    Exact,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    /// Profile values are column powers (amplitude sqrt(r_p)).
    Power,
    /// Profile values are column amplitudes.
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlacementArg {
    Every,
    Inputs,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    /// TOML file whose keys mirror the long flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Signal length.
    #[arg(long = "N", visible_alias = "n", default_value_t = 258)]
    n: usize,
    /// Number of measurements.
    #[arg(long = "M", visible_alias = "m", default_value_t = 129)]
    m: usize,
    /// Number of nonzero signal entries.
    #[arg(long, default_value_t = 12)]
    s: usize,
    /// Signal-to-noise ratio -10 log10(sigma_n^2) in dB.
    #[arg(long, default_value_t = 17.0, allow_negative_numbers = true)]
    snr_db: f64,
    /// Column power-profile factor in (0, 1].
    #[arg(long, default_value_t = 0.2)]
    v: f64,
    /// How profile values scale the columns.
    #[arg(long, value_enum, default_value_t = ProfileArg::Power)]
    profile: ProfileArg,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Iterations per run.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Instances per cell.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Signal support model.
    #[arg(long, value_enum, default_value_t = SupportArg::Exact)]
    support: SupportArg,
    /// Draw fresh instances for every cell instead of sharing them across cells.
    #[arg(long)]
    independent_cells: bool,
    /// Lower precision bound for the denoiser output.
    #[arg(long, default_value_t = 1e-8)]
    clip_nle_min: f64,
    /// Upper precision bound for the denoiser output.
    #[arg(long, default_value_t = 1e8)]
    clip_nle_max: f64,
    /// Lower bound for all other precisions.
    #[arg(long, default_value_t = 1e-12)]
    clip_min: f64,
    /// Upper bound for all other precisions.
    #[arg(long, default_value_t = 1e12)]
    clip_max: f64,
    /// Clip every formed precision, or only denoiser output and cavities.
    #[arg(long, value_enum, default_value_t = PlacementArg::Every)]
    clip_placement: PlacementArg,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[command(flatten)]
    solve: SolveArgs,
    /// Damping parameter in (0, 1].
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    d: f64,
    /// Fractional parameter > 0.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    e: f64,
    /// Damping case: none, onle, olin or cnle.
    #[arg(long, default_value = "none")]
    damping: String,
    /// Variance mode: individual or average.
    #[arg(long, default_value = "individual")]
    mode: String,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[command(flatten)]
    solve: SolveArgs,
    /// d grid: comma list or start:stop:step.
    #[arg(long, default_value = "0.2:1.0:0.1", allow_hyphen_values = true)]
    d: String,
    /// e grid: comma list or start:stop:step.
    #[arg(long, default_value = "0.6:3.5:0.1", allow_hyphen_values = true)]
    e: String,
    /// Comma list of damping cases.
    #[arg(long, default_value = "onle")]
    damping: String,
    /// Comma list of variance modes.
    #[arg(long, default_value = "individual,average")]
    mode: String,
    /// Also write one row per trial.
    #[arg(long)]
    per_trial: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Number of matrices to draw.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
}

/// Fully validated command.
#[derive(Debug, Clone, PartialEq)]
pub enum CliConfig {
    Run {
        spec: EnsembleSpec,
        grid: GridSpec,
        opts: SweepOptions,
        out: PathBuf,
    },
    Sweep {
        spec: EnsembleSpec,
        grid: GridSpec,
        opts: SweepOptions,
        out: PathBuf,
    },
    MatrixStats {
        spec: EnsembleSpec,
        draws: usize,
        threads: Option<usize>,
        out: PathBuf,
    },
}

impl CliConfig {
    pub fn out_dir(&self) -> &Path {
        match self {
            Self::Run { out, .. } | Self::Sweep { out, .. } | Self::MatrixStats { out, .. } => out,
        }
    }
}

/// Why parsing stopped.
#[derive(Debug)]
pub enum ParseFailure {
    /// Usage errors, `--help` and `--version` (clap renders these).
    Clap(clap::Error),
    Invalid(Error),
}

impl ParseFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Clap(e) if !e.use_stderr() => EXIT_OK,
            Self::Clap(_) => EXIT_CONFIG,
            Self::Invalid(e) => exit_code(e),
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Parse `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(text: &str) -> std::result::Result<Vec<f64>, String> {
    let text = text.trim();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("'{}' is not a number", s.trim()))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("range '{text}' must be start:stop:step"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
            return Err(format!("range '{text}' needs step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Snap to 12 decimals so 0.2 + 3 * 0.1 prints as 0.5.
        Ok((0..count)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect())
    } else {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(num)
            .collect()
    }
}

fn parse_list<T: std::str::FromStr<Err = Error>>(
    flag: &str,
    text: &str,
    problems: &mut Vec<String>,
) -> Vec<T> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.parse() {
            Ok(v) => out.push(v),
            Err(Error::Config(msg)) => problems.push(format!("--{flag}: {msg}")),
            Err(e) => problems.push(format!("--{flag}: {e}")),
        }
    }
    if out.is_empty() && !problems.iter().any(|p| p.starts_with(&format!("--{flag}"))) {
        problems.push(format!("--{flag}: empty list"));
    }
    out
}

fn build_spec(
    e: &EnsembleArgs,
    trials: usize,
    support: SupportArg,
    problems: &mut Vec<String>,
) -> EnsembleSpec {
    let spec = EnsembleSpec {
        n: e.n,
        m: e.m,
        s: e.s,
        snr_db: e.snr_db,
        v: e.v,
        trials,
        master_seed: e.seed,
        support: match support {
            SupportArg::Exact => SupportModel::ExactCount,
            SupportArg::Bernoulli => SupportModel::Bernoulli,
        },
        profile: match e.profile {
            ProfileArg::Power => ProfileScaling::Power,
            ProfileArg::Amplitude => ProfileScaling::Amplitude,
        },
    };
    if e.n == 0 {
        problems.push("--N: must be positive".into());
    }
    if e.m == 0 || e.m > e.n {
        problems.push(format!("--M {}: must lie in [1, N = {}]", e.m, e.n));
    }
    if e.s > e.n {
        problems.push(format!("--s {}: must not exceed N = {}", e.s, e.n));
    }
    if e.s == 0 {
        problems.push("--s 0: the signal must have at least one nonzero".into());
    }
    if !e.snr_db.is_finite() {
        problems.push(format!("--snr-db {}: must be finite", e.snr_db));
    }
    if !(e.v > 0.0 && e.v <= 1.0) {
        problems.push(format!("--v {}: must lie in (0, 1]", e.v));
    }
    if e.threads == Some(0) {
        problems.push("--threads 0: must be positive".into());
    }
    spec
}

fn build_opts(s: &SolveArgs, threads: Option<usize>, problems: &mut Vec<String>) -> SweepOptions {
    if s.iters == 0 {
        problems.push("--iters 0: must be positive".into());
    }
    if s.trials == 0 {
        problems.push("--trials 0: must be positive".into());
    }
    let nle = Interval::new(s.clip_nle_min, s.clip_nle_max)
        .map_err(|e| problems.push(format!("--clip-nle-min/--clip-nle-max: {e}")))
        .ok();
    let other = Interval::new(s.clip_min, s.clip_max)
        .map_err(|e| problems.push(format!("--clip-min/--clip-max: {e}")))
        .ok();
    SweepOptions {
        iterations: s.iters,
        clip: match (nle, other) {
            (Some(a), Some(b)) => ClipBounds::new(a, b),
            _ => ClipBounds::default(),
        },
        clip_placement: match s.clip_placement {
            PlacementArg::Every => ClipPlacement::EveryFormation,
            PlacementArg::Inputs => ClipPlacement::EstimatorInputs,
        },
        threads,
        seeding: if s.independent_cells {
            Seeding::IndependentCells
        } else {
            Seeding::CommonInstances
        },
        keep_trials: false,
    }
}

fn check_grid(
    flag: &str,
    values: &[f64],
    ok: impl Fn(f64) -> bool,
    rule: &str,
    problems: &mut Vec<String>,
) {
    for &v in values {
        if !ok(v) {
            problems.push(format!("--{flag} {v}: {rule}"));
        }
    }
}

fn finish(problems: Vec<String>, cfg: CliConfig) -> std::result::Result<CliConfig, ParseFailure> {
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ParseFailure::Invalid(Error::Config(problems.join("\n  "))))
    }
}

/// Expand a TOML file into `--key value` tokens.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = OsString::from(format!("--{key}"));
        let scalar = |v: &toml::Value| match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            other => Err(Error::Config(format!(
                "{}: unsupported value for '{key}': {other}",
                path.display()
            ))),
        };
        match &value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts: Result<Vec<String>> = items.iter().map(scalar).collect();
                out.push(flag);
                out.push(parts?.join(",").into());
            }
            v => {
                out.push(flag);
                out.push(scalar(v)?.into());
            }
        }
    }
    Ok(out)
}

fn config_path(cli: &Cli) -> Option<&Path> {
    match &cli.command {
        Command::Run(a) => a.ensemble.config.as_deref(),
        Command::Sweep(a) => a.ensemble.config.as_deref(),
        Command::GenMatrixStats(a) => a.ensemble.config.as_deref(),
    }
}

/// Parse and validate the command line; every invalid value is reported.
pub fn parse_and_validate<I, S>(argv: I) -> std::result::Result<CliConfig, ParseFailure>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let mut cli = Cli::try_parse_from(&argv).map_err(ParseFailure::Clap)?;
    if let Some(path) = config_path(&cli) {
        let tokens = config_tokens(path).map_err(ParseFailure::Invalid)?;
        // File values first, so explicit flags override them.
        let mut merged = argv[..2].to_vec();
        merged.extend(tokens);
        merged.extend_from_slice(&argv[2..]);
        cli = Cli::try_parse_from(&merged).map_err(ParseFailure::Clap)?;
    }
    let mut problems = Vec::new();
    match cli.command {
        Command::Run(a) => {
            let spec = build_spec(&a.ensemble, a.solve.trials, a.solve.support, &mut problems);
            let opts = build_opts(&a.solve, a.ensemble.threads, &mut problems);
            if !(a.d > 0.0 && a.d <= 1.0) {
                problems.push(format!("--d {}: must lie in (0, 1]", a.d));
            }
            if !(a.e > 0.0) || !a.e.is_finite() {
                problems.push(format!("--e {}: must be > 0", a.e));
            }
            let cases = parse_list::<DampingCase>("damping", &a.damping, &mut problems);
            let modes = parse_list::<VarianceMode>("mode", &a.mode, &mut problems);
            if cases.len() > 1 || modes.len() > 1 {
                problems
                    .push("run takes a single --damping and --mode; use sweep for lists".into());
            }
            let grid = GridSpec {
                cases,
                modes,
                d: vec![a.d],
                e: vec![a.e],
            };
            finish(
                problems,
                CliConfig::Run {
                    spec,
                    grid,
                    opts: SweepOptions {
                        keep_trials: true,
                        ..opts
                    },
                    out: a.ensemble.out,
                },
            )
        }
        Command::Sweep(a) => {
            let spec = build_spec(&a.ensemble, a.solve.trials, a.solve.support, &mut problems);
            let opts = build_opts(&a.solve, a.ensemble.threads, &mut problems);
            let d = parse_grid(&a.d).unwrap_or_else(|e| {
                problems.push(format!("--d: {e}"));
                Vec::new()
            });
            let e = parse_grid(&a.e).unwrap_or_else(|e| {
                problems.push(format!("--e: {e}"));
                Vec::new()
            });
            check_grid(
                "d",
                &d,
                |v| v > 0.0 && v <= 1.0,
                "must lie in (0, 1]",
                &mut problems,
            );
            check_grid(
                "e",
                &e,
                |v| v > 0.0 && v.is_finite(),
                "must be > 0",
                &mut problems,
            );
            let grid = GridSpec {
                cases: parse_list("damping", &a.damping, &mut problems),
                modes: parse_list("mode", &a.mode, &mut problems),
                d,
                e,
            };
            finish(
                problems,
                CliConfig::Sweep {
                    spec,
                    grid,
                    opts: SweepOptions {
                        keep_trials: a.per_trial,
                        ..opts
                    },
                    out: a.ensemble.out,
                },
            )
        }
        Command::GenMatrixStats(a) => {
            let spec = build_spec(&a.ensemble, 1, SupportArg::Exact, &mut problems);
            if a.draws == 0 {
                problems.push("--draws 0: must be positive".into());
            }
            finish(
                problems,
                CliConfig::MatrixStats {
                    spec,
                    draws: a.draws,
                    threads: a.ensemble.threads,
                    out: a.ensemble.out,
                },
            )
        }
    }
}

/// Create the output directory and make sure it accepts files.
fn probe_output(dir: &Path) -> Result<()> {
    let context = |e: std::io::Error| {
        std::io::Error::new(e.kind(), format!("output directory {}: {e}", dir.display()))
    };
    std::fs::create_dir_all(dir).map_err(context)?;
    tempfile::NamedTempFile::new_in(dir).map_err(context)?;
    Ok(())
}

fn report_sweep(result: &SweepResult) {
    for m in &result.minima {
        println!(
            "{:<5} {:<10} d = {:<4} e = {:<4} NMSE = {:.4e}",
            m.case.name(),
            m.mode.name(),
            m.d,
            m.e,
            m.nmse
        );
    }
}

/// What a successful (or numerically failed) command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failed_trials: usize,
    /// Cells in which every trial failed.
    pub empty_cells: usize,
}

impl Outcome {
    pub fn exit_code(&self, cfg: &CliConfig) -> i32 {
        let numeric = match cfg {
            CliConfig::Run { .. } => self.failed_trials > 0,
            CliConfig::Sweep { .. } => self.empty_cells > 0,
            CliConfig::MatrixStats { .. } => false,
        };
        if numeric {
            EXIT_NUMERIC
        } else {
            EXIT_OK
        }
    }
}

/// Run a validated command and write its CSV files.
pub fn execute(cfg: &CliConfig) -> Result<Outcome> {
    probe_output(cfg.out_dir())?;
    match cfg {
        CliConfig::Run {
            spec,
            grid,
            opts,
            out,
        }
        | CliConfig::Sweep {
            spec,
            grid,
            opts,
            out,
        } => {
            let prefix = if matches!(cfg, CliConfig::Run { .. }) {
                "run"
            } else {
                "sweep"
            };
            log::info!(
                "{prefix}: {} cells x {} trials on {} x {} matrices",
                grid.cells().len(),
                spec.trials,
                spec.m,
                spec.n
            );
            let result = run_grid(spec, grid, opts)?;
            let mut files = vec![out.join(format!("{prefix}_cells.csv"))];
            write_cells_csv(&files[0], &result.cells)?;
            if prefix == "sweep" {
                let path = out.join("sweep_minima.csv");
                write_minima_csv(&path, &result.minima)?;
                files.push(path);
            }
            if opts.keep_trials {
                let path = out.join(format!("{prefix}_trials.csv"));
                write_trials_csv(&path, &result.trials, opts.iterations)?;
                files.push(path);
            }
            if prefix == "run" {
                let c = &result.cells[0];
                println!(
                    "mean NMSE = {:.6e} (std {:.3e}), failed {} of {}",
                    c.mean_nmse, c.std_nmse, c.fail_count, c.trials
                );
            } else {
                report_sweep(&result);
            }
            let inflations: usize = result.cells.iter().map(|c| c.variance_inflations).sum();
            if inflations > 0 {
                log::warn!("denoiser returned a posterior variance above its cavity variance {inflations} times");
            }
            let failed_trials = result.cells.iter().map(|c| c.fail_count).sum();
            if failed_trials > 0 {
                log::warn!(
                    "{failed_trials} trials failed numerically and were excluded from the means"
                );
            }
            Ok(Outcome {
                files,
                failed_trials,
                empty_cells: result
                    .cells
                    .iter()
                    .filter(|c| c.fail_count == c.trials)
                    .count(),
            })
        }
        CliConfig::MatrixStats {
            spec,
            draws,
            threads,
            out,
        } => {
            let stats = matrix_draws(spec, *draws, *threads)?;
            let path = out.join("matrix_stats.csv");
            write_matrix_stats_csv(&path, &stats)?;
            let mean = compensated_sum(stats.iter().map(|d| d.kappa)) / stats.len() as f64;
            let min = stats.iter().map(|d| d.kappa).fold(f64::INFINITY, f64::min);
            let max = stats.iter().map(|d| d.kappa).fold(0.0, f64::max);
            println!("kappa over {draws} draws: mean {mean:.4}, min {min:.4}, max {max:.4}");
            Ok(Outcome {
                files: vec![path],
                failed_trials: 0,
                empty_cells: 0,
            })
        }
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cfg = match parse_and_validate(argv) {
        Ok(cfg) => cfg,
        Err(ParseFailure::Clap(e)) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
        Err(ParseFailure::Invalid(e)) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match execute(&cfg) {
        Ok(outcome) => {
            for f in &outcome.files {
                log::info!("wrote {}", f.display());
            }
            outcome.exit_code(&cfg)
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
