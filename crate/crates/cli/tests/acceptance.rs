//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! timing of each check is visible.

#[path = "../../core/tests/support/quadrature.rs"]
mod quadrature;

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ddppm::analysis::{build_omega, convergence_bound, rho, rho_limit, suggest_parameters};
use ddppm::baseline::{ldp_estimate, ldp_perturb_with_variance, LdpConfig};
use ddppm::data::{normalize_unit_ball, partition_rows, Dataset, PartitionedDataset, RawDataset};
use ddppm::engine::{error_metric, run_ddppm, NoiseSchedule, RunConfig};
use ddppm::experiment::{Experiment, ExperimentConfig, Method, EPSILON_SCHEDULE};
use ddppm::network::{benchmark_ring, build_network_operator, ring, Topology};
use ddppm::privacy::{
    audit_privacy_many, default_perturbations, renyi_divergence_gaussian, AuditOptions, GaussianDist,
};
use ddppm::rng::{self, Purpose};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian_matrix(seed: u64, tag: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut g = rng::substream(seed, Purpose::Trial, tag, 0, 0);
    DMatrix::from_vec(rows, cols, rng::gaussian_vec(&mut g, rows * cols, 1.0))
}

/// Orthonormal columns from the QR factor of a Gaussian matrix.
fn orthonormal(seed: u64, tag: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    gaussian_matrix(seed, tag, rows, cols).qr().q()
}

/// `U diag(s) Vᵀ`, scaled into the unit ball.
fn spectrum_dataset(n: usize, s: &[f64], seed: u64) -> Dataset {
    let d = s.len();
    let u = orthonormal(seed, 1, n, d);
    let v = orthonormal(seed, 2, d, d);
    let x = u * DMatrix::from_diagonal(&DVector::from_column_slice(s)) * v.transpose();
    let scale = x.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    Dataset::from_matrix(x / scale).unwrap()
}

fn desk(n: usize, d: usize, m: usize, seed: u64, scales: &[f64]) -> PartitionedDataset {
    let g = gaussian_matrix(seed, 3, n, d);
    let rows = (0..n)
        .map(|r| (0..d).map(|c| g[(r, c)] * scales[c % scales.len()]).collect())
        .collect();
    let x = normalize_unit_ball(&RawDataset::new(rows, "desk").unwrap()).unwrap();
    partition_rows(&x, m, None).unwrap()
}

fn leading_vector(data: &PartitionedDataset) -> DVector<f64> {
    let x = data.stack();
    let eig = (&x * x.transpose()).symmetric_eigen();
    let k = eig.eigenvalues.imax();
    eig.eigenvectors.column(k).into_owned()
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn noiseless_rate() -> Check {
    let x = spectrum_dataset(200, &[2.0, 1.0, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1], 7);
    let data = partition_rows(&x, 4, None).unwrap();
    let top = Topology::new(benchmark_ring(), 60).unwrap();
    let op = build_network_operator(&data, &top).unwrap();
    let (mu1, mu2) = (op.mu[0], op.mu[1]);
    let v = leading_vector(&data);
    let ts: Vec<usize> = (6..=15).collect();
    let logs: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let cfg = RunConfig {
                iterations: t,
                rank: 1,
                alpha: 2.0 / (mu1 + mu2),
                sigma_q: 1.0 / (x.n() as f64).sqrt(),
                sigma_p: NoiseSchedule::zero(),
                seed: 3,
            };
            let q = run_ddppm(&data, &top, &cfg).unwrap().u_hat.column(0).into_owned();
            error_metric(&v, &q).unwrap().ln()
        })
        .collect();
    let fitted = slope(&ts.iter().map(|&t| t as f64).collect::<Vec<_>>(), &logs);
    let expected = (mu2 / mu1).ln();
    let rel = (fitted / expected - 1.0).abs();
    ensure(
        rel <= 0.15,
        format!(
            "slope {fitted:.4} vs log(mu2/mu1) {expected:.4}, off by {:.2}%",
            100.0 * rel
        ),
    )
}

fn consensus_decay() -> Check {
    let x = spectrum_dataset(120, &[1.0, 0.7, 0.5, 0.3, 0.2], 9);
    let data = partition_rows(&x, 4, None).unwrap();
    let cs: Vec<u32> = (1..=20).collect();
    let logs: Vec<f64> = cs
        .iter()
        .map(|&c| {
            build_network_operator(&data, &Topology::new(benchmark_ring(), c).unwrap())
                .unwrap()
                .consensus_gap
                .ln()
        })
        .collect();
    let fitted = slope(&cs.iter().map(|&c| c as f64).collect::<Vec<_>>(), &logs);
    let expected = 0.5_f64.ln();
    let rel = (fitted / expected - 1.0).abs();
    ensure(
        rel <= 0.10,
        format!(
            "slope {fitted:.5} vs log 0.5 = {expected:.5}, off by {:.3}%",
            100.0 * rel
        ),
    )
}

fn omega_covariance() -> Check {
    let data = desk(10, 3, 4, 21, &[1.0, 0.6, 0.3]);
    let top = Topology::new(benchmark_ring(), 10).unwrap();
    let op = build_network_operator(&data, &top).unwrap();
    let s = suggest_parameters(op.mu[0], op.mu[1], data.n(), 1.0).unwrap();
    let base = RunConfig {
        iterations: 3,
        rank: 1,
        alpha: s.alpha,
        sigma_q: s.sigma_q,
        sigma_p: s.sigma_p,
        seed: 0,
    };
    let draws = 10_000;
    let n = data.n();
    let sum = (0..draws as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = RunConfig {
                seed: rng::trial_seed(41, k),
                ..base.clone()
            };
            let q = run_ddppm(&data, &top, &cfg).unwrap().rounds.remove(0).q_tilde;
            &q * q.transpose()
        })
        .reduce(|| DMatrix::zeros(n, n), |a, b| a + b);
    let empirical = sum / draws as f64;
    let omega = build_omega(&op, &base).omega;
    let rel = (&empirical - &omega).norm() / omega.norm();
    ensure(
        rel <= 0.05,
        format!("relative Frobenius error {:.3}% over {draws} seeds", 100.0 * rel),
    )
}

fn random_law(seed: u64, k: u64, dim: usize) -> GaussianDist {
    let mut g = rng::substream(seed, Purpose::Trial, k, dim as u64, 1);
    let mean = DVector::from_vec(rng::gaussian_vec(&mut g, dim, 1.0));
    let b = DMatrix::from_vec(dim, dim, rng::gaussian_vec(&mut g, dim * dim, 0.7));
    let cov = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.3;
    GaussianDist::new(mean, (&cov + cov.transpose()) * 0.5).unwrap()
}

/// Halve the excess of the order over one until `order Λp + (1 − order) Λq`
/// is comfortably positive definite.
fn integrable_order(p: &GaussianDist, q: &GaussianDist, want: f64) -> f64 {
    let pp = p.cov.clone().try_inverse().unwrap();
    let qp = q.cov.clone().try_inverse().unwrap();
    let mut order = want;
    while (&pp * order + &qp * (1.0 - order)).symmetric_eigenvalues().min() <= 1e-2 * pp.norm() {
        order = 1.0 + 0.5 * (order - 1.0);
    }
    order
}

fn renyi_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for k in 0..50u64 {
        let dim = 1 + (k % 3) as usize;
        let p = random_law(77, 2 * k, dim);
        let q = random_law(77, 2 * k + 1, dim);
        let order = integrable_order(&p, &q, 1.25 + (k % 5) as f64 * 0.5);
        let oracle = quadrature::renyi_by_quadrature(&p.mean, &p.cov, &q.mean, &q.cov, order);
        let closed = renyi_divergence_gaussian(&p, &q, order).map_err(|e| e.to_string())?;
        worst = worst.max((closed - oracle).abs());
    }
    ensure(worst <= 1e-8, format!("largest absolute gap {worst:.2e} over 50 pairs"))
}

fn bound_validity() -> Check {
    let data = desk(10, 4, 2, 5, &[3.0, 1.0, 0.5, 0.3]);
    let top = Topology::new(ring(2, 0.75).unwrap(), 10).unwrap();
    let op = build_network_operator(&data, &top).unwrap();
    let s = suggest_parameters(op.mu[0], op.mu[1], data.n(), 1.0).unwrap();
    let gamma = 0.1;
    let cfg = RunConfig {
        iterations: 2,
        rank: 1,
        alpha: s.alpha,
        sigma_q: s.sigma_q,
        sigma_p: s.sigma_p,
        seed: 0,
    };
    let bound = convergence_bound(&data, &op, &top, &cfg, gamma).map_err(|e| e.to_string())?;
    let v = leading_vector(&data);
    let runs = 2000;
    let violations = (0..runs as u64)
        .into_par_iter()
        .filter(|&k| {
            let c = RunConfig {
                seed: rng::trial_seed(13, k),
                ..cfg.clone()
            };
            let q = run_ddppm(&data, &top, &c).unwrap().u_hat.column(0).into_owned();
            error_metric(&v, &q).unwrap().powi(2) > bound.total
        })
        .count();
    let rate = violations as f64 / runs as f64;
    let limit = gamma + 2.0 * (gamma * (1.0 - gamma) / runs as f64).sqrt();
    ensure(
        rate <= limit,
        format!(
            "violation rate {rate:.4} vs limit {limit:.4}; bound {:.4} (hanson-wright {:.4}{}, consensus {:.2e}, decay {:.2e})",
            bound.total,
            bound.delta_hw,
            if bound.hw_vacuous { ", vacuous" } else { "" },
            bound.consensus_term,
            bound.decay_term
        ),
    )
}

fn rho_admissible() -> Check {
    let mut g = ChaCha8Rng::seed_from_u64(2024);
    let mut uniform = move || g.random::<f64>();
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let mu1 = 0.5 + 10.0 * uniform();
        let mu2 = mu1 * (0.05 + 0.9 * uniform());
        // Strictly inside (1/μ₁, 1/μ₂).
        let alpha = (1.0 / mu1) + (0.02 + 0.96 * uniform()) * (1.0 / mu2 - 1.0 / mu1);
        let sigma_q = 0.05 + uniform();
        let iterations = 1 + (uniform() * 30.0) as usize;
        let values = (1..=iterations)
            .map(|t| uniform() * (mu2 / mu1).powi(t as i32))
            .collect();
        let cfg = RunConfig {
            iterations,
            rank: 1,
            alpha,
            sigma_q,
            sigma_p: NoiseSchedule::Explicit { values },
            seed: 0,
        };
        let r = rho(&cfg, mu1, mu2).map_err(|e| e.to_string())?;
        let limit = rho_limit(sigma_q, alpha, mu1);
        if r.is_nan() || r > limit {
            return Err(format!(
                "rho {r} exceeds {limit} at mu1={mu1}, mu2={mu2}, alpha={alpha}"
            ));
        }
        worst = worst.min(limit - r);
    }
    Ok(format!("100 draws, smallest margin {worst:.3e}"))
}

fn delta_sanity() -> Check {
    let data = desk(12, 3, 4, 31, &[1.0, 0.5, 0.25]);
    let top = Topology::new(benchmark_ring(), 10).unwrap();
    let op = build_network_operator(&data, &top).unwrap();
    let s = suggest_parameters(op.mu[0], op.mu[1], data.n(), 1.0).unwrap();
    let perturbations = default_perturbations(&data, 1, None);
    let mut ok = true;
    let mut details = Vec::new();
    // The exact audit and the reduced one used by the dataset configs.
    for energy_tol in [AuditOptions::default().energy_tol, 0.95] {
        let opts = AuditOptions {
            energy_tol,
            ..AuditOptions::default()
        };
        let mut table = Vec::new();
        for t in 1..=4 {
            let cfg = RunConfig {
                iterations: t,
                rank: 1,
                alpha: s.alpha,
                sigma_q: s.sigma_q,
                sigma_p: s.sigma_p.clone(),
                seed: 1,
            };
            let reports = audit_privacy_many(&data, &top, &cfg, &EPSILON_SCHEDULE, &perturbations, &opts)
                .map_err(|e| e.to_string())?;
            table.push(reports.iter().map(|r| r.delta).collect::<Vec<_>>());
        }
        let in_range = table.iter().flatten().all(|d| (0.0..=1.0).contains(d));
        let monotone_eps = table.iter().all(|row| row.windows(2).all(|w| w[1] <= w[0]));
        let monotone_t = (0..EPSILON_SCHEDULE.len()).all(|e| table.windows(2).all(|w| w[1][e] >= w[0][e]));
        ok &= in_range && monotone_eps && monotone_t;
        let shown: Vec<String> = table.iter().map(|row| format!("{:.3e}", row[1])).collect();
        details.push(format!(
            "energy {energy_tol}: in [0,1] {in_range}, non-increasing in epsilon {monotone_eps}, non-decreasing in T {monotone_t}, delta(eps=2) for T=1..4 {}",
            shown.join(" ")
        ));
    }
    ensure(ok, details.join("; "))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn privacy_utility() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["diabetes", "wine", "breast_cancer"] {
        let path = configs_dir().join(format!("{name}.toml"));
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut config: ExperimentConfig = toml::from_str(&text).map_err(|e| e.to_string())?;
        let caps = config.privacy.delta_caps.clone().ok_or("config has no delta caps")?;
        let keep: Vec<usize> = [2.0, 5.0]
            .iter()
            .map(|e| {
                config
                    .privacy
                    .epsilons
                    .iter()
                    .position(|x| x == e)
                    .expect("schedule contains 2 and 5")
            })
            .collect();
        config.privacy.epsilons = keep.iter().map(|&k| config.privacy.epsilons[k]).collect();
        config.privacy.delta_caps = Some(keep.iter().map(|&k| caps[k]).collect());
        if config.sweep.trials < 100 {
            return Err(format!("{name}: only {} trials", config.sweep.trials));
        }
        config.resolve_paths(&configs_dir());
        let exp = Experiment::prepare(config).map_err(|e| e.to_string())?;
        let report = exp.sweep().map_err(|e| e.to_string())?;
        for pair in report.rows.chunks(2) {
            let (ours, ldp) = (&pair[0], &pair[1]);
            assert_eq!((ours.method, ldp.method), (Method::Ddppm, Method::Ldp));
            let line = match (ours.error, ldp.error) {
                (Some(a), Some(b)) => {
                    ok &= a.mean < b.mean;
                    format!(
                        "{name} eps={}: {:.3e} vs ldp {:.3e} (delta {:.3e} <= {})",
                        ours.epsilon,
                        a.mean,
                        b.mean,
                        ours.audited_delta.unwrap_or(f64::NAN),
                        ours.delta_cap
                    )
                }
                _ => {
                    ok = false;
                    format!(
                        "{name} eps={}: no feasible point under delta <= {}",
                        ours.epsilon, ours.delta_cap
                    )
                }
            };
            details.push(line);
        }
    }
    ensure(ok, details.join("; "))
}

fn ldp_correctness() -> Check {
    let variance = LdpConfig {
        epsilon: 1.0,
        delta: 0.05,
        seed: 0,
    }
    .variance()
    .map_err(|e| e.to_string())?;
    let expected = 2.0 * 25.0_f64.ln();
    let data = desk(30, 5, 4, 8, &[1.0, 0.7, 0.4, 0.2, 0.1]);
    let noisy = ldp_perturb_with_variance(&data, 0.0, 3).map_err(|e| e.to_string())?;
    let estimate = ldp_estimate(&noisy.x, 3).map_err(|e| e.to_string())?;
    let svd = data.stack().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.unwrap();
    let mut gap: f64 = 0.0;
    for (k, &col) in order.iter().take(3).enumerate() {
        let plain = u.column(col).into_owned();
        let ours = estimate.column(k).into_owned();
        // Singular vectors are defined up to sign.
        gap = gap.max((&plain - &ours).amax().min((&plain + &ours).amax()));
    }
    ensure(
        (variance - expected).abs() <= 1e-12 * expected && gap <= 1e-10,
        format!("variance {variance} vs 2 ln 25 = {expected}; largest gap to plain SVD {gap:.2e}"),
    )
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let data = desk(16, 3, 4, 12, &[1.0, 0.6, 0.3]);
    let x = data.stack();
    let mut csv = String::from("a,b,c\n");
    for row in x.row_iter() {
        csv.push_str(&row.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    std::fs::write(root.join("desk.csv"), csv).map_err(|e| e.to_string())?;
    let config = r#"
[dataset]
path = "desk.csv"

[topology]
kind = "benchmark_ring"
rounds = 10

[run]
seed = 4
iterations = 3

[privacy]
epsilons = [2, 5]
delta_caps = [0.5, 0.2]
energy_tol = 0.95
realizations = 2
rows_per_agent = 1

[sweep]
trials = 10
etas = [1.0]
alpha_factors = [1.0]
iteration_offsets = [-1, 0]

[figdata]
epsilon = 5
max_iterations = 3
"#;
    std::fs::write(root.join("desk.toml"), config).map_err(|e| e.to_string())?;
    let outputs = [
        (vec!["run"], "run.json"),
        (vec!["sweep"], "sweep.csv"),
        (vec!["audit"], "audit.json"),
        (vec!["bound"], "bound.json"),
        (vec!["figdata"], "error_vs_epsilon.csv"),
        (vec!["figdata"], "error_vs_iterations.csv"),
        (vec!["validate"], ""),
    ];
    let mut compared = 0;
    for (args, file) in outputs {
        let mut seen = Vec::new();
        for _ in 0..2 {
            let out = root.join("out");
            let status = Command::new(env!("CARGO_BIN_EXE_ddppm"))
                .args(&args)
                .arg("--config")
                .arg(root.join("desk.toml"))
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if status.status.code().is_none_or(|c| c == 2) {
                return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            seen.push(if file.is_empty() {
                status.stdout
            } else {
                let bytes = std::fs::read(out.join(file)).map_err(|e| format!("{file}: {e}"))?;
                std::fs::remove_file(out.join(file)).map_err(|e| e.to_string())?;
                bytes
            });
        }
        if seen[0] != seen[1] {
            return Err(format!("{args:?} {file} differs between runs"));
        }
        compared += 1;
    }
    Ok(format!("{compared} outputs byte-identical across reruns"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("noiseless fidelity", noiseless_rate, Duration::from_secs(10)),
        ("consensus decay", consensus_decay, Duration::from_secs(5)),
        ("final iterate covariance", omega_covariance, Duration::from_secs(60)),
        ("renyi oracle", renyi_oracle, Duration::from_secs(10)),
        ("convergence bound validity", bound_validity, Duration::from_secs(300)),
        ("rho bound", rho_admissible, Duration::from_secs(1)),
        ("delta sanity", delta_sanity, Duration::from_secs(300)),
        ("privacy-utility ordering", privacy_utility, Duration::from_secs(1800)),
        ("ldp correctness", ldp_correctness, Duration::from_secs(1)),
        ("determinism", determinism, Duration::from_secs(120)),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check, budget)) in criteria.into_iter().enumerate() {
        let number = k + 1;
        if !only.is_empty() && !only.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; took longer than {budget:?}")),
            Err(d) => (false, d),
        };
        println!(
            "criterion {number} ({name}): {} in {:.2}s: {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
