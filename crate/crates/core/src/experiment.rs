//! Experiment orchestration: configuration, Monte-Carlo error estimates,
//! the privacy-constrained parameter sweep and plot-ready tables.

use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{suggest_parameters, SuggestedParameters};
use crate::baseline::{ldp_estimate, ldp_perturb, LdpConfig};
use crate::data::{load_csv, normalize_unit_ball, parse_csv, partition_rows, PartitionedDataset};
use crate::engine::{draw_noise, error_metric, run_ddppm, NoiseSchedule, RunConfig, RunResult};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{benchmark_ring, build_network_operator, complete, path, ring, NetworkOperator, Topology};
use crate::privacy::{
    audit_privacy_many, default_perturbations, load_perturbations, AuditOptions, Composition, Perturbation,
    PrivacyReport,
};
use crate::rng;

pub const EPSILON_SCHEDULE: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 100.0];
pub const DIABETES_DELTA_CAPS: [f64; 7] = [0.38, 0.143, 0.008, 2e-4, 2e-4, 1e-4, 1e-7];
pub const BREAST_CANCER_DELTA_CAPS: [f64; 7] = [0.38, 0.15, 0.008, 2e-4, 2e-4, 1e-4, 1e-7];
pub const WINE_DELTA_CAPS: [f64; 7] = [0.44, 0.20, 0.04, 0.007, 0.007, 0.006, 0.002];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default = "yes")]
    pub header: bool,
    /// Subtract column means before scaling into the unit ball.
    #[serde(default)]
    pub center: bool,
    /// Keep only these 0-based columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<usize>>,
    /// Rows per agent; balanced when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    BenchmarkRing,
    Ring,
    Complete,
    Path,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    /// Agent count for the generators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Consensus rounds per iteration.
    #[serde(default = "default_rounds")]
    pub rounds: u32,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            kind: TopologyKind::BenchmarkRing,
            agents: None,
            self_weight: None,
            file: None,
            rounds: default_rounds(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Ddppm,
    Ldp,
}

/// Algorithm knobs. Absent values come from the suggested parameters and
/// the offline noiseless iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default = "one")]
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_q: Option<f64>,
    /// Scale of the suggested noise schedule.
    #[serde(default = "unit")]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_p: Option<NoiseSchedule>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldp_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldp_delta: Option<f64>,
    /// Include every shared vector in the run output.
    #[serde(default)]
    pub trace: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            method: Method::Ddppm,
            iterations: None,
            rank: 1,
            alpha: None,
            sigma_q: None,
            eta: 1.0,
            sigma_p: None,
            seed: 0,
            ldp_epsilon: None,
            ldp_delta: None,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// One cap per ε; needed by the sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_caps: Option<Vec<f64>>,
    #[serde(default = "default_energy_tol")]
    pub energy_tol: f64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    /// Perturb only this many largest-norm rows per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_per_agent: Option<usize>,
    /// Perturbation file replacing the default set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<Composition>,
    #[serde(default)]
    pub symmetric: bool,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        Self {
            epsilons: default_epsilons(),
            delta_caps: None,
            energy_tol: default_energy_tol(),
            realizations: default_realizations(),
            rows_per_agent: None,
            perturbations: None,
            composition: None,
            symmetric: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_alpha_factors")]
    pub alpha_factors: Vec<f64>,
    #[serde(default = "default_offsets")]
    pub iteration_offsets: Vec<i64>,
    /// Noiseless error defining the reference iteration count.
    #[serde(default = "default_target_error")]
    pub target_error: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            etas: default_etas(),
            alpha_factors: default_alpha_factors(),
            iteration_offsets: default_offsets(),
            target_error: default_target_error(),
            max_iterations: default_max_iterations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigSpec {
    #[serde(default = "default_fig_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_fig_iterations")]
    pub max_iterations: usize,
}

impl Default for FigSpec {
    fn default() -> Self {
        Self {
            epsilon: default_fig_epsilon(),
            max_iterations: default_fig_iterations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self { gamma: default_gamma() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub topology: TopologySpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub privacy: PrivacySpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub figdata: FigSpec,
    #[serde(default)]
    pub bound: BoundSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_rounds() -> u32 {
    10
}
fn default_epsilons() -> Vec<f64> {
    EPSILON_SCHEDULE.to_vec()
}
fn default_energy_tol() -> f64 {
    1.0 - 1e-12
}
fn default_realizations() -> usize {
    8
}
fn default_trials() -> usize {
    100
}
fn default_etas() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}
fn default_alpha_factors() -> Vec<f64> {
    vec![0.9, 1.0, 1.1]
}
fn default_offsets() -> Vec<i64> {
    vec![-4, -2, 0, 2, 4]
}
fn default_target_error() -> f64 {
    1e-3
}
fn default_max_iterations() -> usize {
    200
}
fn default_fig_epsilon() -> f64 {
    5.0
}
fn default_fig_iterations() -> usize {
    15
}
fn default_gamma() -> f64 {
    0.1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Make relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        if let Some(p) = self.topology.file.as_mut() {
            fix(p);
        }
        if let Some(p) = self.privacy.perturbations.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.dataset.path.is_file() {
            return bad(format!("dataset {} does not exist", self.dataset.path.display()));
        }
        match (&self.topology.kind, &self.topology.file) {
            (TopologyKind::File, None) => return bad("topology kind 'file' needs a file".into()),
            (TopologyKind::File, Some(p)) if !p.is_file() => {
                return bad(format!("mixing matrix {} does not exist", p.display()))
            }
            _ => {}
        }
        if let Some(p) = &self.privacy.perturbations {
            if !p.is_file() {
                return bad(format!("perturbation file {} does not exist", p.display()));
            }
        }
        if self.topology.rounds < 1 {
            return bad("topology rounds must be at least 1".into());
        }
        if self.privacy.epsilons.is_empty() || self.privacy.epsilons.iter().any(|e| !(*e > 0.0)) {
            return bad("epsilon schedule must be non-empty and positive".into());
        }
        if let Some(caps) = &self.privacy.delta_caps {
            if caps.len() != self.privacy.epsilons.len() {
                return bad(format!(
                    "{} delta caps for {} epsilons",
                    caps.len(),
                    self.privacy.epsilons.len()
                ));
            }
            if caps.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
                return bad("delta caps must lie in (0, 1)".into());
            }
        }
        if !(self.privacy.energy_tol > 0.0 && self.privacy.energy_tol <= 1.0) {
            return bad(format!(
                "energy_tol must lie in (0, 1], got {}",
                self.privacy.energy_tol
            ));
        }
        let s = &self.sweep;
        if s.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if s.etas.is_empty() || s.alpha_factors.is_empty() || s.iteration_offsets.is_empty() {
            return bad("sweep grids must be non-empty".into());
        }
        if s.etas.iter().chain(&s.alpha_factors).any(|v| !(*v > 0.0)) {
            return bad("sweep scales must be positive".into());
        }
        if s.max_iterations < 1 || self.figdata.max_iterations < 1 {
            return bad("iteration limits must be at least 1".into());
        }
        if !(self.figdata.epsilon > 0.0) {
            return bad("figure epsilon must be positive".into());
        }
        if !(self.bound.gamma > 0.0 && self.bound.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.bound.gamma));
        }
        if self.run.rank < 1 {
            return bad("rank must be at least 1".into());
        }
        Ok(())
    }
}

/// Load a mixing matrix from a CSV file.
pub fn load_mixing_matrix(path: &Path, header: bool) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw = parse_csv(&text, header, &path.display().to_string())?;
    if raw.n() != raw.d() {
        return Err(Error::Dimension(format!("mixing matrix is {}×{}", raw.n(), raw.d())));
    }
    Ok(DMatrix::from_fn(raw.n(), raw.d(), |r, c| raw.rows[r][c]))
}

impl TopologySpec {
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let agents = || {
            self.agents
                .ok_or_else(|| Error::Config("topology generator needs 'agents'".into()))
        };
        match self.kind {
            TopologyKind::BenchmarkRing => Ok(benchmark_ring()),
            TopologyKind::Ring => ring(agents()?, self.self_weight.unwrap_or(0.5)),
            TopologyKind::Complete => complete(agents()?),
            TopologyKind::Path => path(agents()?),
            TopologyKind::File => {
                let file = self
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Config("topology file missing".into()))?;
                load_mixing_matrix(file, false)
            }
        }
    }
}

/// Sample mean and standard deviation of per-trial errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

impl ErrorStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let k = samples.len();
        let mean = samples.iter().sum::<f64>() / k as f64;
        let std = if k > 1 {
            (samples.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, trials: k }
    }
}

/// One grid point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub alpha: f64,
    pub iterations: usize,
}

/// One `(method, ε)` line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub epsilon: f64,
    pub delta_cap: f64,
    /// `None` when no grid point met the cap.
    pub error: Option<ErrorStats>,
    pub audited_delta: Option<f64>,
    pub point: Option<SweepPoint>,
}

impl SweepRow {
    pub fn feasible(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub reference_iterations: usize,
    pub rows: Vec<SweepRow>,
    /// Grid points audited before every ε was settled.
    pub audited_points: usize,
}

/// One line of the error/δ-versus-iterations table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRow {
    pub iterations: usize,
    pub error: ErrorStats,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRound {
    pub z: Vec<Vec<Vec<f64>>>,
    pub z_half: Vec<Vec<Vec<f64>>>,
    pub q_tilde: Vec<f64>,
}

/// Result document shared by both methods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ldp: Option<LdpConfig>,
    /// `sin(u_k, û_k)` against the exact eigenvectors of `X Xᵀ`.
    pub errors: Vec<f64>,
    /// Estimated eigenvectors, one array per column.
    pub estimate: Vec<Vec<f64>>,
    /// `‖q̃^(T)‖` per rank round.
    pub norms: Vec<f64>,
    pub iterate_norms: Vec<Vec<f64>>,
    pub deflation_residuals: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRound>>,
}

/// A loaded experiment: data, network and exact reference eigenvectors.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: PartitionedDataset,
    pub topology: Topology,
    pub operator: NetworkOperator,
    /// Exact leading eigenvectors of `X Xᵀ`, `n × r`.
    pub reference: DMatrix<f64>,
}

impl Experiment {
    /// Load and validate everything the configuration references. Paths are
    /// used as given.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut raw = load_csv(&config.dataset.path, config.dataset.header)?;
        if let Some(columns) = &config.dataset.columns {
            raw = raw.select_columns(columns)?;
        }
        if config.dataset.center {
            raw = raw.centered();
        }
        let x = normalize_unit_ball(&raw)?;
        let w = config.topology.matrix()?;
        let topology = Topology::new(w, config.topology.rounds)?;
        let data = partition_rows(&x, topology.m(), config.dataset.sizes.as_deref())?;
        let rank = config.run.rank;
        if rank > x.n().min(x.d()) {
            return Err(Error::Config(format!(
                "rank {rank} exceeds min(n, d) = {}",
                x.n().min(x.d())
            )));
        }
        let operator = build_network_operator(&data, &topology)?;
        let (_, u) = linalg::left_singular(x.matrix());
        let reference = u.columns(0, rank).into_owned();
        info!(
            "loaded {}: n={} d={} m={} μ₁={:.4e} μ₂={:.4e}",
            raw.source_name,
            data.n(),
            data.d(),
            data.m(),
            operator.mu[0],
            operator.mu.get(1).copied().unwrap_or(0.0)
        );
        Ok(Self {
            config,
            data,
            topology,
            operator,
            reference,
        })
    }

    pub fn suggested(&self, eta: f64) -> Result<SuggestedParameters> {
        let mu = &self.operator.mu;
        suggest_parameters(mu[0], mu.get(1).copied().unwrap_or(0.0), self.data.n(), eta)
    }

    fn base_schedule(&self) -> Result<NoiseSchedule> {
        Ok(match &self.config.run.sigma_p {
            Some(s) => s.scaled(self.config.run.eta),
            None => self.suggested(self.config.run.eta)?.sigma_p,
        })
    }

    /// Noise schedule at sweep scale `eta` relative to the configured one.
    fn schedule_at(&self, eta: f64) -> Result<NoiseSchedule> {
        Ok(match &self.config.run.sigma_p {
            Some(s) => s.scaled(eta),
            None => self.suggested(eta)?.sigma_p,
        })
    }

    fn base_alpha(&self) -> Result<f64> {
        Ok(match self.config.run.alpha {
            Some(a) => a,
            None => self.suggested(1.0)?.alpha,
        })
    }

    fn sigma_q(&self) -> f64 {
        self.config.run.sigma_q.unwrap_or(1.0 / (self.data.n() as f64).sqrt())
    }

    /// Smallest `T` whose noiseless iterate is within the sweep's target
    /// error of the principal eigenvector; the best `T` seen when none is.
    pub fn reference_iterations(&self, alpha: f64) -> Result<usize> {
        let probe = RunConfig {
            iterations: 0,
            rank: 1,
            alpha,
            sigma_q: self.sigma_q(),
            sigma_p: NoiseSchedule::zero(),
            seed: self.config.run.seed,
        };
        let mut q = draw_noise(&self.data, &probe, 0).q0;
        let v = self.reference.column(0).into_owned();
        let step = &self.operator.xi * alpha;
        let mut best = (f64::INFINITY, 1);
        for t in 1..=self.config.sweep.max_iterations {
            q = &step * q;
            let norm = q.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                break;
            }
            q /= norm;
            let e = error_metric(&v, &q)?;
            if e <= self.config.sweep.target_error {
                return Ok(t);
            }
            if e < best.0 {
                best = (e, t);
            }
        }
        warn!(
            "noiseless error never reached {} within {} iterations; using T = {} (error {:.3e})",
            self.config.sweep.target_error, self.config.sweep.max_iterations, best.1, best.0
        );
        Ok(best.1)
    }

    /// The run configuration the file describes, with gaps filled in.
    pub fn run_config(&self) -> Result<RunConfig> {
        let alpha = self.base_alpha()?;
        let iterations = match self.config.run.iterations {
            Some(t) => t,
            None => self.reference_iterations(alpha)?,
        };
        let cfg = RunConfig {
            iterations,
            rank: self.config.run.rank,
            alpha,
            sigma_q: self.sigma_q(),
            sigma_p: self.base_schedule()?,
            seed: self.config.run.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn point_config(&self, point: &SweepPoint) -> Result<RunConfig> {
        let cfg = RunConfig {
            iterations: point.iterations,
            rank: self.config.run.rank,
            alpha: point.alpha,
            sigma_q: self.sigma_q(),
            sigma_p: self.schedule_at(point.eta)?,
            seed: self.config.run.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn perturbations(&self) -> Result<Vec<Perturbation>> {
        match &self.config.privacy.perturbations {
            Some(path) => load_perturbations(path, self.data.d()),
            None => Ok(default_perturbations(
                &self.data,
                self.config.run.seed,
                self.config.privacy.rows_per_agent,
            )),
        }
    }

    pub fn audit_options(&self) -> AuditOptions {
        let p = &self.config.privacy;
        AuditOptions {
            energy_tol: p.energy_tol,
            realizations: p.realizations,
            composition: p.composition,
            symmetric: p.symmetric,
        }
    }

    pub fn audit(
        &self,
        cfg: &RunConfig,
        epsilons: &[f64],
        perturbations: &[Perturbation],
    ) -> Result<Vec<PrivacyReport>> {
        audit_privacy_many(
            &self.data,
            &self.topology,
            cfg,
            epsilons,
            perturbations,
            &self.audit_options(),
        )
    }

    fn sin_errors(&self, estimate: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..self.reference.ncols())
            .map(|k| error_metric(&self.reference.column(k).into_owned(), &estimate.column(k).into_owned()))
            .collect()
    }

    fn mean_sin_error(&self, estimate: &DMatrix<f64>) -> Result<f64> {
        let e = self.sin_errors(estimate)?;
        Ok(e.iter().sum::<f64>() / e.len() as f64)
    }

    /// Mean over the rank of `sin(u_k, û_k)`, across `trials` seeds derived
    /// from `seed`.
    pub fn ddppm_errors(&self, cfg: &RunConfig, trials: usize, seed: u64) -> Result<ErrorStats> {
        let samples = (0..trials as u64)
            .into_par_iter()
            .map(|k| {
                let run = RunConfig {
                    seed: rng::trial_seed(seed, k),
                    ..cfg.clone()
                };
                let result = run_ddppm(&self.data, &self.topology, &run)?;
                self.mean_sin_error(&result.u_hat)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(ErrorStats::from_samples(&samples))
    }

    pub fn ldp_errors(&self, epsilon: f64, delta: f64, trials: usize, seed: u64) -> Result<ErrorStats> {
        let samples = (0..trials as u64)
            .into_par_iter()
            .map(|k| {
                let cfg = LdpConfig {
                    epsilon,
                    delta,
                    seed: rng::trial_seed(seed, k),
                };
                let noisy = ldp_perturb(&self.data, &cfg)?;
                self.mean_sin_error(&ldp_estimate(&noisy.x, self.config.run.rank)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(ErrorStats::from_samples(&samples))
    }

    /// One run of the configured method.
    pub fn single_run(&self) -> Result<RunReport> {
        match self.config.run.method {
            Method::Ddppm => {
                let cfg = self.run_config()?;
                let result = run_ddppm(&self.data, &self.topology, &cfg)?;
                Ok(self.ddppm_report(cfg, &result)?)
            }
            Method::Ldp => {
                let (epsilon, delta) = match (self.config.run.ldp_epsilon, self.config.run.ldp_delta) {
                    (Some(e), Some(d)) => (e, d),
                    _ => return Err(Error::Config("an LDP run needs ldp_epsilon and ldp_delta".into())),
                };
                let cfg = LdpConfig {
                    epsilon,
                    delta,
                    seed: self.config.run.seed,
                };
                let noisy = ldp_perturb(&self.data, &cfg)?;
                let estimate = ldp_estimate(&noisy.x, self.config.run.rank)?;
                Ok(RunReport {
                    method: Method::Ldp,
                    run: None,
                    ldp: Some(cfg),
                    errors: self.sin_errors(&estimate)?,
                    estimate: columns(&estimate),
                    norms: Vec::new(),
                    iterate_norms: Vec::new(),
                    deflation_residuals: Vec::new(),
                    trace: None,
                })
            }
        }
    }

    fn ddppm_report(&self, cfg: RunConfig, result: &RunResult) -> Result<RunReport> {
        let trace = self.config.run.trace.then(|| {
            result
                .rounds
                .iter()
                .map(|r| TraceRound {
                    z: nested(&r.z),
                    z_half: nested(&r.z_half),
                    q_tilde: linalg::to_vec(&r.q_tilde),
                })
                .collect()
        });
        Ok(RunReport {
            method: Method::Ddppm,
            errors: self.sin_errors(&result.u_hat)?,
            estimate: columns(&result.u_hat),
            norms: result.norms(),
            iterate_norms: result.rounds.iter().map(|r| r.iterate_norms.clone()).collect(),
            deflation_residuals: result.rounds.iter().map(|r| r.deflation_residual).collect(),
            run: Some(cfg),
            ldp: None,
            trace,
        })
    }

    /// The sweep grid around the reference iteration count `t_ref`.
    pub fn grid(&self, t_ref: usize) -> Result<Vec<SweepPoint>> {
        let s = &self.config.sweep;
        let alpha = self.base_alpha()?;
        let mut points = Vec::new();
        for &eta in &s.etas {
            for &factor in &s.alpha_factors {
                let mut seen = Vec::new();
                for &offset in &s.iteration_offsets {
                    let t = (t_ref as i64 + offset).max(1) as usize;
                    if !seen.contains(&t) {
                        seen.push(t);
                        points.push(SweepPoint {
                            eta,
                            alpha: alpha * factor,
                            iterations: t,
                        });
                    }
                }
            }
        }
        Ok(points)
    }

    /// For every ε: the grid point with the smallest mean error whose audited
    /// δ meets the cap, and the LDP baseline at that cap.
    pub fn sweep(&self) -> Result<SweepReport> {
        let caps = self
            .config
            .privacy
            .delta_caps
            .clone()
            .ok_or_else(|| Error::Config("the sweep needs privacy.delta_caps".into()))?;
        let epsilons = &self.config.privacy.epsilons;
        let trials = self.config.sweep.trials;
        let seed = self.config.run.seed;
        let t_ref = match self.config.run.iterations {
            Some(t) => t,
            None => self.reference_iterations(self.base_alpha()?)?,
        };
        let points = self.grid(t_ref)?;
        info!(
            "sweep: T* = {t_ref}, {} grid points, {trials} trials each",
            points.len()
        );
        let errors: Vec<Option<ErrorStats>> = points
            .par_iter()
            .map(|p| {
                let cfg = self.point_config(p)?;
                Ok(match self.ddppm_errors(&cfg, trials, seed) {
                    Ok(stats) if stats.mean.is_finite() => Some(stats),
                    Ok(_) => None,
                    Err(Error::DegenerateNorm { .. }) => None,
                    Err(e) => return Err(e),
                })
            })
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..points.len()).filter(|&k| errors[k].is_some()).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (errors[a].unwrap().mean, errors[b].unwrap().mean);
            ea.total_cmp(&eb).then(a.cmp(&b))
        });
        let perturbations = self.perturbations()?;
        let mut chosen: Vec<Option<(usize, f64)>> = vec![None; epsilons.len()];
        let mut audited = 0;
        for &k in &order {
            if chosen.iter().all(Option::is_some) {
                break;
            }
            let cfg = self.point_config(&points[k])?;
            let reports = self.audit(&cfg, epsilons, &perturbations)?;
            audited += 1;
            debug!(
                "audited {:?}: {:?}",
                points[k],
                reports.iter().map(|r| r.delta).collect::<Vec<_>>()
            );
            for (e, report) in reports.iter().enumerate() {
                if chosen[e].is_none() && report.delta <= caps[e] {
                    chosen[e] = Some((k, report.delta));
                }
            }
        }
        let mut rows = Vec::with_capacity(2 * epsilons.len());
        for (e, (&epsilon, &cap)) in epsilons.iter().zip(&caps).enumerate() {
            let row = match chosen[e] {
                Some((k, delta)) => SweepRow {
                    method: Method::Ddppm,
                    epsilon,
                    delta_cap: cap,
                    error: errors[k],
                    audited_delta: Some(delta),
                    point: Some(points[k]),
                },
                None => {
                    warn!("no grid point meets δ ≤ {cap} at ε = {epsilon}");
                    SweepRow {
                        method: Method::Ddppm,
                        epsilon,
                        delta_cap: cap,
                        error: None,
                        audited_delta: None,
                        point: None,
                    }
                }
            };
            rows.push(row);
            rows.push(SweepRow {
                method: Method::Ldp,
                epsilon,
                delta_cap: cap,
                error: Some(self.ldp_errors(epsilon, cap, trials, seed)?),
                audited_delta: None,
                point: None,
            });
        }
        Ok(SweepReport {
            reference_iterations: t_ref,
            rows,
            audited_points: audited,
        })
    }

    /// Mean error and audited δ at the figure ε for `T = 1..=max` with the
    /// other parameters of `point` held fixed.
    pub fn iteration_profile(&self, point: &SweepPoint) -> Result<Vec<IterationRow>> {
        let epsilon = self.config.figdata.epsilon;
        let perturbations = self.perturbations()?;
        (1..=self.config.figdata.max_iterations)
            .map(|t| {
                let cfg = self.point_config(&SweepPoint {
                    iterations: t,
                    ..*point
                })?;
                let error = self.ddppm_errors(&cfg, self.config.sweep.trials, self.config.run.seed)?;
                let delta = self.audit(&cfg, &[epsilon], &perturbations)?[0].delta;
                Ok(IterationRow {
                    iterations: t,
                    error,
                    delta,
                })
            })
            .collect()
    }

    /// The point the iteration profile holds fixed: the sweep's choice at
    /// the figure ε when there is one, else the configured parameters.
    pub fn profile_point(&self, sweep: Option<&SweepReport>) -> Result<SweepPoint> {
        let epsilon = self.config.figdata.epsilon;
        let picked = sweep.and_then(|s| {
            s.rows
                .iter()
                .find(|r| r.method == Method::Ddppm && r.epsilon == epsilon)
                .and_then(|r| r.point)
        });
        Ok(match picked {
            Some(p) => p,
            None => SweepPoint {
                eta: self.config.run.eta,
                alpha: self.base_alpha()?,
                iterations: 1,
            },
        })
    }
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| linalg::to_vec(&c.into_owned())).collect()
}

fn nested(v: &[Vec<DVector<f64>>]) -> Vec<Vec<Vec<f64>>> {
    v.iter()
        .map(|per_agent| per_agent.iter().map(linalg::to_vec).collect())
        .collect()
}

/// CSV text of the sweep table.
pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out =
        String::from("method,epsilon,delta_cap,mean_error,std,trials,status,audited_delta,eta,alpha,iterations\n");
    for row in &report.rows {
        let method = match row.method {
            Method::Ddppm => "ddppm",
            Method::Ldp => "ldp",
        };
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let (mean, std, trials) = match row.error {
            Some(e) => (format!("{:e}", e.mean), format!("{:e}", e.std), e.trials.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let status = if row.feasible() { "ok" } else { "infeasible" };
        let (eta, alpha, iterations) = match row.point {
            Some(p) => (
                format!("{:e}", p.eta),
                format!("{:e}", p.alpha),
                p.iterations.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{method},{},{},{mean},{std},{trials},{status},{},{eta},{alpha},{iterations}\n",
            row.epsilon,
            row.delta_cap,
            opt(row.audited_delta)
        ));
    }
    out
}

/// CSV text of the iteration profile.
pub fn iteration_csv(rows: &[IterationRow]) -> String {
    let mut out = String::from("iterations,mean_error,std,trials,delta\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{},{:e}\n",
            r.iterations, r.error.mean, r.error.std, r.error.trials, r.delta
        ));
    }
    out
}
