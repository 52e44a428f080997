#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use ddppm::analysis::convergence_bound;
use ddppm::experiment::{
    iteration_csv, load_mixing_matrix, sweep_csv, Experiment, ExperimentConfig, TopologyKind, TopologySpec,
};
use ddppm::network::{benchmark_ring, complete, path, ring, validate_mixing_matrix};
use ddppm::privacy::Composition;

const TOOL: &str = "ddppm";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "ddppm",
    version,
    about = "Decentralized private power method: simulate, sweep, audit, bound"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Mean-center the data before normalization.
    #[arg(long, global = true)]
    center: bool,
    /// How rank rounds are composed in the privacy audit.
    #[arg(long, global = true, value_enum)]
    compose: Option<Compose>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Compose {
    Stacked,
    NaiveSum,
}

#[derive(Subcommand)]
enum Command {
    /// Check a mixing matrix: a CSV file, `benchmark`, `ring:M[:SELF]`,
    /// `complete:M` or `path:M`. Falls back to the config's topology.
    Validate { topology: Option<String> },
    /// One run; writes run.json.
    Run,
    /// Privacy-constrained comparison against the LDP baseline; writes sweep.csv.
    Sweep,
    /// Privacy audit of the configured run; writes audit.json.
    Audit {
        /// Privacy levels; defaults to the config's schedule.
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
    },
    /// Convergence bound of the configured run; writes bound.json.
    Bound {
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Plot-ready tables: error_vs_epsilon.csv and error_vs_iterations.csv.
    Figdata,
}

/// Failures mapped to exit codes.
enum Failure {
    /// Bad input: exit 2.
    Usage(anyhow::Error),
    /// Validation failed or no feasible point: exit 1.
    Rejected(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Rejected(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'a str,
    version: &'a str,
    config_digest: &'a str,
    result: T,
}

struct Loaded {
    config: ExperimentConfig,
    digest: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DDPPM_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Rejected(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode, Failure> {
    match &cli.command {
        Command::Validate { topology } => validate(cli, topology.as_deref()),
        Command::Run => {
            let (exp, loaded) = experiment(cli)?;
            let report = exp.single_run()?;
            write_json(&exp, &loaded, "run.json", &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep => {
            let (exp, loaded) = experiment(cli)?;
            let report = exp.sweep()?;
            write_text(&exp, &loaded, "sweep.csv", &sweep_csv(&report))?;
            Ok(if report.rows.iter().all(|r| r.feasible()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Audit { epsilon } => {
            let (exp, loaded) = experiment(cli)?;
            let epsilons = if epsilon.is_empty() {
                exp.config.privacy.epsilons.clone()
            } else {
                epsilon.clone()
            };
            if epsilons.iter().any(|e| !(*e > 0.0)) {
                return Err(usage(anyhow!("epsilon values must be positive")));
            }
            let cfg = exp.run_config()?;
            let perturbations = exp.perturbations()?;
            let mut reports = exp.audit(&cfg, &epsilons, &perturbations)?;
            for r in &mut reports {
                r.config_digest = Some(loaded.digest.clone());
            }
            write_json(&exp, &loaded, "audit.json", &reports)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bound { gamma } => {
            let (exp, loaded) = experiment(cli)?;
            let gamma = gamma.unwrap_or(exp.config.bound.gamma);
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(usage(anyhow!("gamma must lie in (0, 1), got {gamma}")));
            }
            let cfg = exp.run_config()?;
            let report = convergence_bound(&exp.data, &exp.operator, &exp.topology, &cfg, gamma)?;
            write_json(&exp, &loaded, "bound.json", &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Figdata => {
            let (exp, loaded) = experiment(cli)?;
            let sweep = exp.sweep()?;
            write_text(&exp, &loaded, "error_vs_epsilon.csv", &sweep_csv(&sweep))?;
            let point = exp.profile_point(Some(&sweep))?;
            info!("iteration profile at {point:?}");
            let rows = exp.iteration_profile(&point)?;
            write_text(&exp, &loaded, "error_vs_iterations.csv", &iteration_csv(&rows))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Loaded, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| usage(anyhow!("this command needs --config")))?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)?;
    let mut config: ExperimentConfig = toml::from_str(&text)
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(usage)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if cli.center {
        config.dataset.center = true;
    }
    if let Some(c) = cli.compose {
        config.privacy.composition = Some(match c {
            Compose::Stacked => Composition::Stacked,
            Compose::NaiveSum => Composition::NaiveSum,
        });
    }
    // Digest before paths are made absolute, so it does not depend on the
    // working directory. Where results are written does not change them.
    let mut digested = config.clone();
    digested.output_dir = PathBuf::new();
    let canonical = serde_json::to_vec(&digested).map_err(usage)?;
    let digest = hex(&Sha256::digest(&canonical));
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve_paths(&base);
    if cli.out.is_some() {
        config.output_dir = cli.out.clone().unwrap_or_default();
    }
    config.validate().map_err(usage)?;
    Ok(Loaded { config, digest })
}

fn experiment(cli: &Cli) -> Result<(Experiment, Loaded), Failure> {
    let loaded = load_config(cli)?;
    let exp = Experiment::prepare(loaded.config.clone()).map_err(usage)?;
    Ok((exp, loaded))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn output_path(exp: &Experiment, name: &str) -> Result<PathBuf, Failure> {
    let dir = &exp.config.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir.join(name))
}

fn write_json<T: Serialize>(exp: &Experiment, loaded: &Loaded, name: &str, result: &T) -> Result<(), Failure> {
    let envelope = Envelope {
        tool: TOOL,
        version: VERSION,
        config_digest: &loaded.digest,
        result,
    };
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    let path = output_path(exp, name)?;
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn write_text(exp: &Experiment, loaded: &Loaded, name: &str, body: &str) -> Result<(), Failure> {
    let path = output_path(exp, name)?;
    let text = format!("# {TOOL} {VERSION} config {}\n{body}", loaded.digest);
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn parse_generator(spec: &str) -> Option<Result<nalgebra::DMatrix<f64>, Failure>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let count = |k: usize| -> Result<usize, Failure> {
        parts
            .get(k)
            .ok_or_else(|| usage(anyhow!("{spec}: missing agent count")))?
            .parse()
            .map_err(|e| usage(anyhow!("{spec}: {e}")))
    };
    let lib = |r: ddppm::error::Result<nalgebra::DMatrix<f64>>| r.map_err(usage);
    Some(match parts[0] {
        "benchmark" => Ok(benchmark_ring()),
        "ring" => (|| {
            let self_weight = match parts.get(2) {
                Some(s) => s.parse().map_err(|e| usage(anyhow!("{spec}: {e}")))?,
                None => 0.5,
            };
            lib(ring(count(1)?, self_weight))
        })(),
        "complete" => count(1).and_then(|m| lib(complete(m))),
        "path" => count(1).and_then(|m| lib(path(m))),
        _ => return None,
    })
}

fn validate(cli: &Cli, topology: Option<&str>) -> Result<ExitCode, Failure> {
    let w = match topology {
        Some(spec) => match parse_generator(spec) {
            Some(w) => w?,
            None => load_mixing_matrix(Path::new(spec), false).map_err(usage)?,
        },
        None => {
            let loaded = load_config(cli)?;
            let spec: &TopologySpec = &loaded.config.topology;
            if spec.kind == TopologyKind::File {
                load_mixing_matrix(spec.file.as_deref().unwrap_or(Path::new("")), false).map_err(usage)?
            } else {
                spec.matrix().map_err(usage)?
            }
        }
    };
    let diag = validate_mixing_matrix(&w);
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!("size: {}x{}", diag.size.0, diag.size.1);
    println!("(i) non-negative weights: {}", mark(diag.nonnegative));
    println!("(ii) undirected support: {}", mark(diag.undirected));
    println!("(iii) doubly stochastic: {}", mark(diag.doubly_stochastic()));
    println!("(iv) connected: {}", mark(diag.connected));
    println!("symmetric: {}", mark(diag.symmetric));
    println!("lambda2: {}", diag.lambda2);
    println!("lambda2 < 1: {}", mark(diag.mixing));
    let failures = diag.failures();
    if failures.is_empty() {
        println!("valid");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("invalid: {}", failures.join(", "));
        Ok(ExitCode::from(1))
    }
}
