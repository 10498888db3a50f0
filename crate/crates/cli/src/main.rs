//! `eb`: fit, adjust and evaluate mixture priors for multivariate
//! empirical-Bayes shrinkage from the command line.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use signshrink::adjustment::{adjust_prior, constant_shift, AdjustMethod};
use signshrink::fitting::{em_fit, EmConfig};
use signshrink::io::{self, IoError, ModelFile, Provenance, ScenarioFile};
use signshrink::posterior::{effect_tables, posterior_summaries, responsibilities, s_values};
use signshrink::simulation::{evaluate_levels, rank_sweep, run_scenario, ScenarioConfig, PRESETS};
use signshrink::Error;

const VERSION: &str = env!("CARGO_PKG_VERSION");
const DEFAULT_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.15, 0.2];

#[derive(Parser)]
#[command(name = "eb", version, about = "Multivariate empirical-Bayes shrinkage with local false sign rates")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a K-component prior by EM and write the model plus a log-likelihood trace.
    Fit(FitArgs),
    /// Posterior mean, P(mu <= 0), lfsr and s-value for every (sample, condition).
    Posterior(PosteriorArgs),
    /// Make every prior covariance full rank by raising its diagonal.
    Adjust(AdjustArgs),
    /// Run a simulation preset or TOML scenario and write FSR/power tables.
    Simulate(SimulateArgs),
    /// Calibration table of sign decisions against known true effects.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Headerless CSV, one row per sample.
    #[arg(long)]
    data: PathBuf,
    /// `identity`, an R x R CSV shared by all samples, or N stacked R x R blocks.
    #[arg(long, default_value = "identity")]
    noise: String,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of mixture components.
    #[arg(long)]
    k: usize,
    /// Rank limit: one value for every component or a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    rank: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Model file (JSON); the trace goes next to it as `<stem>.trace.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PosteriorArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Constant,
    InfoMat,
    LowerBound,
}

#[derive(Args)]
struct AdjustArgs {
    #[arg(long)]
    model: PathBuf,
    /// Data used for the responsibilities (not needed for `constant`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "identity")]
    noise: String,
    #[arg(long, value_enum)]
    method: Method,
    /// Added to every diagonal entry (`constant`).
    #[arg(long = "const")]
    constant: Option<f64>,
    /// Two-sided Wald level (`info-mat`).
    #[arg(long)]
    alpha: Option<f64>,
    /// Lower-bound standard deviations added (`lower-bound`).
    #[arg(long)]
    multiplier: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name or path to a TOML scenario file.
    #[arg(long)]
    preset: String,
    /// Override the replicate count.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `summary.csv` and `replicates.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Posterior table written by `eb posterior`.
    #[arg(long)]
    data: PathBuf,
    /// Headerless N x R CSV of true effects.
    #[arg(long)]
    truth: PathBuf,
    /// Comma-separated nominal levels.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::DegenerateComponent { .. } | Error::NoIncrease { .. } => 3,
        Error::DimensionMismatch { .. } | Error::RankOutOfRange { .. } | Error::DimensionTooSmall { .. } => 4,
        Error::SingularInformation { .. } => 5,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = match &e {
            Error::SingularInformation { .. } => {
                format!("{e}; try --method lower-bound, which needs no information matrix")
            }
            _ => e.to_string(),
        };
        Self { code: code_for(&e), message }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Model(inner) => inner.into(),
            other => Self { code: 2, message: other.to_string() },
        }
    }
}

fn output_error(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 1, message: format!("{}: {e}", path.display()) }
}

fn write_output(out: Option<&Path>, body: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => Ok(io::write_text(p, body)?),
        None => std::io::stdout().write_all(body).map_err(|e| output_error(Path::new("<stdout>"), e)),
    }
}

fn cmd_fit(a: FitArgs) -> Result<(), Failure> {
    let data = io::read_data(&a.data.data, &a.data.noise)?;
    let mut config = EmConfig::default().with_seed(a.seed);
    match a.rank.len() {
        0 => {}
        1 => config = config.with_ranks(vec![a.rank[0]; a.k]),
        _ => config = config.with_ranks(a.rank.clone()),
    }
    let (prior, trace) = em_fit(&data, a.k, &config)?;
    if !trace.converged {
        log::warn!("EM stopped at the iteration limit ({}) before converging", config.max_iters);
    }
    let (hash, fit) = io::fit_provenance(a.k, &config);
    let model = ModelFile::from_prior(
        &prior,
        Provenance { tool_version: VERSION.into(), fit_config_hash: Some(hash), fit, ..Default::default() },
    );
    model.write(&a.out)?;
    let trace_path = a.out.with_extension("trace.csv");
    io::write_text(&trace_path, io::trace_csv(&trace).as_bytes())?;
    log::info!("wrote {} and {}", a.out.display(), trace_path.display());
    Ok(())
}

fn cmd_posterior(a: PosteriorArgs) -> Result<(), Failure> {
    let data = io::read_data(&a.data.data, &a.data.noise)?;
    let prior = ModelFile::read(&a.model)?.to_prior()?;
    if prior.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: prior.dim(), found: data.dim() }.into());
    }
    let summaries = posterior_summaries(&data, &prior)?;
    let (means, lfsr) = effect_tables(&summaries);
    let neg = DMatrix::from_fn(data.len(), data.dim(), |i, j| summaries[i].neg_prob[j]);
    let flat: Vec<f64> = (0..lfsr.len()).map(|f| lfsr[(f / data.dim(), f % data.dim())]).collect();
    let s = s_values(&flat);
    let mut buf = Vec::new();
    io::write_posterior_csv(&mut buf, &means, &neg, &lfsr, &s).expect("in-memory write");
    write_output(a.out.as_deref(), &buf)
}

fn cmd_adjust(a: AdjustArgs) -> Result<(), Failure> {
    let mut model = ModelFile::read(&a.model)?;
    let prior = model.to_prior()?;
    let name = match a.method {
        Method::Constant => "constant",
        Method::InfoMat => "info-mat",
        Method::LowerBound => "lower-bound",
    };
    let method = io::parse_method(name, a.constant, a.alpha, a.multiplier)?.expect("a method was named");
    let adjusted = match (method, &a.data) {
        (AdjustMethod::Constant(c), None) => constant_shift(&prior, c)?,
        (_, Some(p)) => {
            let data = io::read_data(p, &a.noise)?;
            if data.dim() != prior.dim() {
                return Err(Error::DimensionMismatch { expected: prior.dim(), found: data.dim() }.into());
            }
            let (gamma, _) = responsibilities(&data, &prior)?;
            adjust_prior(&prior, &gamma, &data, method)?
        }
        (_, None) => return Err(Failure { code: 2, message: format!("--data is required for --method {name}") }),
    };
    let mut provenance = std::mem::take(&mut model.provenance);
    provenance.tool_version = VERSION.into();
    provenance.adjustment = Some(name.into());
    provenance.adjustment_params = io::adjustment_params(&method);
    ModelFile::from_prior(&adjusted, provenance).write(&a.out)?;
    Ok(())
}

fn load_scenario(name: &str) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(name);
    if path.extension().is_some_and(|e| e == "toml") || path.is_file() {
        return Ok(ScenarioFile::read(path)?.into_config()?);
    }
    ScenarioConfig::preset(name).map_err(|_| Failure {
        code: 2,
        message: format!("unknown preset '{name}'; available presets: {}", PRESETS.join(", ")),
    })
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut config = load_scenario(&a.preset)?;
    if let Some(r) = a.reps {
        config.n_reps = r;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let report = match config.ranks.clone() {
        Some(ranks) => rank_sweep(&config, &ranks)?,
        None => run_scenario(&config)?,
    };
    let mut summary = Vec::new();
    let mut reps = Vec::new();
    report.write_summary_csv(&mut summary).expect("in-memory write");
    report.write_replicates_csv(&mut reps).expect("in-memory write");
    io::write_text(&a.out.join("summary.csv"), &summary)?;
    io::write_text(&a.out.join("replicates.csv"), &reps)?;
    let mut stdout = std::io::stdout().lock();
    for row in &report.summary {
        let rank = row.rank.map_or_else(String::new, |r| format!(" rank={r}"));
        writeln!(
            stdout,
            "{} arm={}{} alpha={} fsp={:.4} se={:.4} fsr_hat={:.4} power={:.4} ok={} failed={}",
            report.scenario, row.arm, rank, row.alpha, row.mean_fsp, row.se_fsp, row.mean_fsr_hat, row.mean_power, row.n_ok, row.n_failed
        )
        .map_err(|e| output_error(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let (means, lfsr) = io::read_posterior_csv(&a.data)?;
    let truth = io::read_matrix_csv(&a.truth)?;
    if truth.shape() != means.shape() {
        return Err(Failure {
            code: 4,
            message: format!(
                "truth is {}x{} but the posterior table is {}x{}",
                truth.nrows(),
                truth.ncols(),
                means.nrows(),
                means.ncols()
            ),
        });
    }
    let alphas = if a.alpha.is_empty() { DEFAULT_GRID.to_vec() } else { a.alpha.clone() };
    let levels = evaluate_levels(&lfsr, &means, &truth, &alphas)?;
    let mut out = String::from("alpha,selected,fsp,fsr_hat,power\n");
    for l in levels {
        out.push_str(&format!("{},{},{},{},{}\n", l.alpha, l.selected, l.fsp, l.fsr_hat, l.power));
    }
    write_output(a.out.as_deref(), out.as_bytes())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 2, message: format!("--threads: {e}") })?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Posterior(a) => cmd_posterior(a),
        Command::Adjust(a) => cmd_adjust(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EB_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
