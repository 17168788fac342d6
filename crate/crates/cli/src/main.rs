use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mechdecomp::decide::{nesting_map, SnrPolicy, DEFAULT_L1_BUDGET};
use mechdecomp::decompose::{Decomposition, SolverConfig};
use mechdecomp::harness::{
    plb_saved, run_adaptive, run_experiment, AdaptiveConfig, Corpus, DecisionMode,
    ExperimentConfig, PLB_DEFINITION,
};
use mechdecomp::spec::MechanismSpec;
use mechdecomp::workloads::ingest_histogram;
use mechdecomp::{Error, Exec, LinearGaussianMechanism, PrivacyAccount, Tolerances};
use serde_json::json;

const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_STOP: u8 = 4;

/// Decompose linear Gaussian mechanisms into a shared common part and residuals.
#[derive(Debug, Parser)]
#[command(name = "mechdecomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Relative cutoff below which singular/eigenvalues count as zero.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol_rank: f64,

    /// Relative slack allowed on negative eigenvalues in PSD checks.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol_psd: f64,

    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Common mechanism, residuals and reconstruction maps for two or more specs.
    Decompose {
        #[arg(required = true, num_args = 2..)]
        specs: Vec<PathBuf>,
    },
    /// zCDP ρ, per-record ρ and (ε, δ) conversions for one spec.
    Account {
        spec: PathBuf,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        epsilons: Vec<f64>,
    },
    /// Run common → decide → residual → reconstruct on one histogram.
    Adaptive {
        spec1: PathBuf,
        spec2: PathBuf,
        /// Histogram CSV over the specs' domain.
        data: PathBuf,
        /// Policy as `x,y`: at least a fraction x of queries with SNR ≥ y.
        #[arg(long, value_parser = parse_policy, default_value = "0.9,3")]
        policy: SnrPolicy,
        /// Force probe-based decisions even when the pair is nested.
        #[arg(long)]
        general: bool,
        #[arg(long, default_value_t = 20)]
        probes: usize,
    },
    /// Run an experiment config (JSON) and report per-configuration rows.
    Experiment { config: PathBuf },
    /// Percent of the budget the common mechanism would cost standalone.
    PlbSaved { spec1: PathBuf, spec2: PathBuf },
}

fn parse_policy(s: &str) -> Result<SnrPolicy, String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `x,y`, got {s:?}"))?;
    let x: f64 = x.trim().parse().map_err(|e| format!("policy x: {e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("policy y: {e}"))?;
    SnrPolicy::new(x, y).map_err(|e| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SolverFailed { .. }
            | Error::Infeasible(_)
            | Error::InternalInconsistency(_)
            | Error::NotCommon(_)
            | Error::NotAnswerable => Failure::Solver(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn with_path<T>(path: &Path, r: mechdecomp::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        f => f,
    })
}

fn load_mechanism(path: &Path) -> Result<LinearGaussianMechanism, Failure> {
    with_path(path, MechanismSpec::load(path).and_then(|s| s.build()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json_text<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn require_json(cli: &Cli, what: &str) -> Result<(), Failure> {
    if cli.format == Format::Csv {
        return Err(Failure::Input(format!("{what} output is JSON only")));
    }
    Ok(())
}

/// Relative CSV corpus paths are taken relative to the config file.
fn resolve_corpus(cfg: &mut ExperimentConfig, config_path: &Path) {
    let base = config_path.parent().unwrap_or(Path::new(""));
    if let Corpus::Csv { paths } = &mut cfg.corpus {
        for p in paths.iter_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
    }
}

/// Returns `true` when the adaptive decision was Stop.
fn run(cli: &Cli) -> Result<bool, Failure> {
    let tol = Tolerances::new(cli.tol_rank, cli.tol_psd)?;
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Decompose { specs } => {
            require_json(cli, "decompose")?;
            let targets = specs
                .iter()
                .map(|p| load_mechanism(p))
                .collect::<Result<Vec<_>, _>>()?;
            let d = Decomposition::new(targets, &SolverConfig::default(), tol)?;
            log::info!(
                "common mechanism has {} queries, rho {}",
                d.common.num_queries(),
                d.common.rho()
            );
            emit(out, &json_text(&d.to_doc())?)?;
        }
        Command::Account { spec, epsilons } => {
            let m = load_mechanism(spec)?;
            if epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                return Err(Failure::Input(
                    "epsilons must be finite and nonnegative".into(),
                ));
            }
            let acc = PrivacyAccount::of(&m, epsilons);
            let text = match cli.format {
                Format::Json => json_text(&acc)?,
                Format::Csv => {
                    let mut s = String::from("epsilon,delta\n");
                    for (e, d) in &acc.epsilon_delta {
                        let _ = writeln!(s, "{e},{d}");
                    }
                    s
                }
            };
            emit(out, &text)?;
        }
        Command::Adaptive {
            spec1,
            spec2,
            data,
            policy,
            general,
            probes,
        } => {
            require_json(cli, "adaptive")?;
            let m1 = load_mechanism(spec1)?;
            let m2 = load_mechanism(spec2)?;
            let domain = with_path(spec1, MechanismSpec::load(spec1)?.domain())?;
            let x = with_path(data, ingest_histogram(data, &domain))?;
            let nested = m1.domain_size() == m2.domain_size()
                && nesting_map(m1.query(), m2.query(), tol)?.is_some();
            let mode = if nested && !general {
                DecisionMode::Nested
            } else {
                DecisionMode::General {
                    num_probes: *probes,
                    l1_budget: DEFAULT_L1_BUDGET,
                }
            };
            let cfg = AdaptiveConfig {
                mode,
                policy: *policy,
            };
            let t = run_adaptive(&m1, &m2, &x, &cfg, cli.seed, tol, exec)?;
            emit(out, &json_text(&t)?)?;
            return Ok(t.chosen.is_none());
        }
        Command::Experiment { config } => {
            let text = std::fs::read_to_string(config)
                .map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
            resolve_corpus(&mut cfg, config);
            let report = run_experiment(&cfg, cli.seed, tol, exec)?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            match cli.format {
                Format::Json => {
                    emit(out, &json_text(&report)?)?;
                    // A CSV mirror of the rows sits next to the JSON report.
                    if let Some(p) = out {
                        std::fs::write(p.with_extension("csv"), &csv)?;
                    }
                }
                Format::Csv => emit(out, &String::from_utf8_lossy(&csv))?,
            }
        }
        Command::PlbSaved { spec1, spec2 } => {
            let m1 = load_mechanism(spec1)?;
            let m2 = load_mechanism(spec2)?;
            if m1.domain_size() != m2.domain_size() {
                return Err(Failure::Input(format!(
                    "domain mismatch: {} cells vs {} cells",
                    m1.domain_size(),
                    m2.domain_size()
                )));
            }
            let pct = plb_saved(&m1, &m2, tol)?;
            let text = match cli.format {
                Format::Json => json_text(&json!({
                    "plb_saved": pct,
                    "rho": m1.rho(),
                    "definition": PLB_DEFINITION,
                }))?,
                Format::Csv => format!("plb_saved,rho\n{pct},{}\n", m1.rho()),
            };
            emit(out, &text)?;
        }
    }
    Ok(false)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("decision: stop (only the common mechanism's budget was spent)");
            ExitCode::from(EXIT_STOP)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
