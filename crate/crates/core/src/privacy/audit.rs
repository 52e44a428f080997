//! Per-observer privacy auditing over a finite set of adjacent datasets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::divergence::{delta_from_curve, pair_geometry, DeltaBound, DivergenceCurve};
use super::observer::{observer_model, ObserverModel, ProjectedRealization};
use super::release::OwnRealization;
use crate::data::PartitionedDataset;
use crate::engine::{round_datasets, run_ddppm, RunConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::Topology;
use crate::rng::{self, Purpose};

/// One adjacent dataset: row `row` of agent `agent`'s block moves by
/// `magnitude · direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub id: String,
    pub agent: usize,
    /// Row index within the agent's block.
    pub row: usize,
    pub direction: Vec<f64>,
    pub magnitude: f64,
}

impl Perturbation {
    pub fn shift(&self) -> DVector<f64> {
        DVector::from_iterator(self.direction.len(), self.direction.iter().map(|v| v * self.magnitude))
    }

    /// Rejects out-of-range targets and shifts longer than one.
    pub fn validate(&self, data: &PartitionedDataset) -> Result<()> {
        let bad = |msg: String| Err(Error::Perturbation(format!("{}: {msg}", self.id)));
        if self.agent >= data.m() {
            return bad(format!("agent {} out of range", self.agent));
        }
        if self.row >= data.block(self.agent).nrows() {
            return bad(format!("row {} out of range for agent {}", self.row, self.agent));
        }
        if self.direction.len() != data.d() {
            return bad(format!(
                "direction has {} entries, data dimension is {}",
                self.direction.len(),
                data.d()
            ));
        }
        let shift = self.shift();
        if shift.iter().any(|v| !v.is_finite()) {
            return bad("non-finite shift".into());
        }
        if shift.norm() > 1.0 + 1e-12 {
            return bad(format!("shift norm {} exceeds 1", shift.norm()));
        }
        Ok(())
    }
}

/// Unit shifts of each row along ± its own direction, ± the two leading
/// right singular vectors of the stacked data, and four random directions.
/// With `rows_per_agent`, only that many largest-norm rows per agent are
/// perturbed.
pub fn default_perturbations(data: &PartitionedDataset, seed: u64, rows_per_agent: Option<usize>) -> Vec<Perturbation> {
    let d = data.d();
    let singular = linalg::right_singular(&data.stack(), 2.min(d));
    let mut out = Vec::new();
    for agent in 0..data.m() {
        let block = data.block(agent);
        let mut rows: Vec<usize> = (0..block.nrows()).collect();
        if let Some(limit) = rows_per_agent {
            let norm = |r: usize| block.row(r).norm();
            rows.sort_by(|&a, &b| norm(b).total_cmp(&norm(a)).then(a.cmp(&b)));
            rows.truncate(limit);
            rows.sort_unstable();
        }
        for row in rows {
            let mut push = |tag: String, dir: DVector<f64>| {
                out.push(Perturbation {
                    id: format!("a{agent}r{row}-{tag}"),
                    agent,
                    row,
                    direction: dir.iter().copied().collect(),
                    magnitude: 1.0,
                });
            };
            let x = block.row(row).transpose();
            let norm = x.norm();
            if norm > 0.0 {
                push("own+".into(), &x / norm);
                push("own-".into(), -&x / norm);
            }
            for k in 0..singular.ncols() {
                let v = singular.column(k).into_owned();
                push(format!("sv{k}+"), v.clone());
                push(format!("sv{k}-"), -v);
            }
            let mut g = rng::substream(seed, Purpose::Perturbation, agent as u64, row as u64, 0);
            for k in 0..4 {
                let v = DVector::from_vec(rng::gaussian_vec(&mut g, d, 1.0));
                let n = v.norm();
                if n > 0.0 {
                    push(format!("rand{k}"), v / n);
                }
            }
        }
    }
    out
}

/// Parse `agent,row,v_1,…,v_d,magnitude` lines (0-based indices, `#`
/// comments and blank lines ignored). Ids are `line<k>`.
pub fn parse_perturbations(text: &str, d: usize) -> Result<Vec<Perturbation>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 3 {
            return Err(Error::Perturbation(format!(
                "line {}: expected {} fields, found {}",
                k + 1,
                d + 3,
                fields.len()
            )));
        }
        let index = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Perturbation(format!("line {}: bad index {s:?}", k + 1)))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Perturbation(format!("line {}: bad number {s:?}", k + 1)))
        };
        out.push(Perturbation {
            id: format!("line{}", k + 1),
            agent: index(fields[0])?,
            row: index(fields[1])?,
            direction: fields[2..2 + d].iter().map(|s| real(s)).collect::<Result<_>>()?,
            magnitude: real(fields[2 + d])?,
        });
    }
    Ok(out)
}

pub fn load_perturbations(path: impl AsRef<Path>, d: usize) -> Result<Vec<Perturbation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_perturbations(&text, d)
}

/// How rank rounds combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Rényi divergences of the rounds add before the Chernoff step.
    Stacked,
    /// Each round gets `ε / r`; the δs add.
    NaiveSum,
}

impl Composition {
    pub fn default_for_rank(rank: usize) -> Self {
        if rank <= 2 {
            Self::Stacked
        } else {
            Self::NaiveSum
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Fraction of the joint covariance trace kept by the rank reduction.
    pub energy_tol: f64,
    /// Random own-randomness realizations audited besides the canonical one.
    pub realizations: usize,
    /// `None` picks by rank.
    pub composition: Option<Composition>,
    /// Also audit each pair with the roles of the two datasets swapped.
    pub symmetric: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            energy_tol: 1.0 - 1e-12,
            realizations: 8,
            composition: None,
            symmetric: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverDelta {
    pub agent: usize,
    pub delta: f64,
    pub beta_star: Option<f64>,
    pub perturbation_id: Option<String>,
    /// Divergence infinite for the worst perturbation.
    pub infinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    /// `max_i δ_i`: a lower-bound certificate over the audited set.
    pub delta: f64,
    pub per_observer: Vec<ObserverDelta>,
    /// Perturbation attaining `delta`.
    pub perturbation_id: Option<String>,
    pub composition: Composition,
    pub rounds: usize,
    pub perturbations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

/// Own randomness of `agent` in round `round`: canonical for index 0, random
/// afterwards.
fn realization(data: &PartitionedDataset, cfg: &RunConfig, agent: usize, round: usize, index: usize) -> OwnRealization {
    let n_i = data.offsets(agent).len();
    if index == 0 {
        return OwnRealization::canonical(n_i, cfg.iterations, cfg.sigma_q);
    }
    let base = (round * (cfg.iterations + 1)) as u64;
    let draw = |t: usize, std: f64| {
        let mut g = rng::substream(
            cfg.seed,
            Purpose::Realization,
            index as u64,
            agent as u64,
            base + t as u64,
        );
        DVector::from_vec(rng::gaussian_vec(&mut g, n_i, std))
    };
    OwnRealization {
        q0: draw(0, cfg.sigma_q),
        p: (1..=cfg.iterations).map(|t| draw(t, cfg.sigma_p.at(t))).collect(),
    }
}

struct RoundView {
    model: ObserverModel,
    data: PartitionedDataset,
    own: Vec<ProjectedRealization>,
}

/// δ of one (observer, perturbation) pair for every ε.
fn pair_deltas(
    views: &[RoundView],
    pert: &Perturbation,
    wc: &DMatrix<f64>,
    cfg: &RunConfig,
    epsilons: &[f64],
    opts: &AuditOptions,
    composition: Composition,
) -> Result<Vec<DeltaBound>> {
    let shift = pert.shift();
    let realizations = views[0].own.len();
    let directions = if opts.symmetric { 2 } else { 1 };
    // curves[l][realization][direction]
    let mut curves: Vec<Vec<[Option<DivergenceCurve>; 2]>> = Vec::with_capacity(views.len());
    for view in views {
        let x = view.data.block(pert.agent).row(pert.row).transpose();
        let moved = &x + &shift;
        let gram = &view.model.grams[pert.agent] - &x * x.transpose() + &moved * moved.transpose();
        let other = view
            .model
            .with_gram(pert.agent, linalg::symmetrize(&gram), wc, cfg.alpha);
        let (cov, cov_other) = (view.model.covariance(), other.covariance());
        let geometry = match pair_geometry(&cov, &cov_other, opts.energy_tol) {
            Ok(g) => Some(g),
            Err(Error::ZeroCovariance) => None,
            Err(e) => return Err(e),
        };
        let mut per_round = Vec::with_capacity(realizations);
        for own in &view.own {
            let diff = view.model.mean(own)? - other.mean(own)?;
            per_round.push(match &geometry {
                Some(g) => [g.curve(&diff, false), g.curve(&diff, true)],
                None if diff.iter().all(|v| *v == 0.0) => {
                    [Some(DivergenceCurve::default()), Some(DivergenceCurve::default())]
                }
                None => [None, None],
            });
        }
        curves.push(per_round);
    }

    let worst = |candidates: &mut dyn Iterator<Item = DeltaBound>| {
        candidates.fold(None::<DeltaBound>, |acc, b| match acc {
            Some(a) if a.delta >= b.delta => Some(a),
            _ => Some(b),
        })
    };
    let rounds = views.len();
    Ok(epsilons
        .iter()
        .map(|&eps| match composition {
            Composition::Stacked => {
                let mut all = (0..realizations)
                    .flat_map(|r| (0..directions).map(move |dir| (r, dir)))
                    .map(|(r, dir)| {
                        let mut total = DivergenceCurve::default();
                        for round in &curves {
                            match &round[r][dir] {
                                Some(c) => total.extend(c),
                                None => return DeltaBound::INFINITE,
                            }
                        }
                        delta_from_curve(&total, eps)
                    });
                worst(&mut all).expect("at least one realization")
            }
            Composition::NaiveSum => {
                let share = eps / rounds as f64;
                let mut delta = 0.0;
                let mut infinite = false;
                let mut beta_star = None;
                for round in &curves {
                    let mut all = round
                        .iter()
                        .flat_map(|pair| pair.iter().take(directions))
                        .map(|c| match c {
                            Some(c) => delta_from_curve(c, share),
                            None => DeltaBound::INFINITE,
                        });
                    let b = worst(&mut all).expect("at least one realization");
                    delta += b.delta;
                    infinite |= b.infinite;
                    beta_star = beta_star.or(b.beta_star);
                }
                DeltaBound {
                    delta: delta.min(1.0),
                    beta_star,
                    infinite,
                }
            }
        })
        .collect())
}

/// Audit every observer against every perturbation of another agent, for
/// several privacy levels at once.
pub fn audit_privacy_many(
    data: &PartitionedDataset,
    top: &Topology,
    cfg: &RunConfig,
    epsilons: &[f64],
    perturbations: &[Perturbation],
    opts: &AuditOptions,
) -> Result<Vec<PrivacyReport>> {
    cfg.validate()?;
    if top.m() != data.m() {
        return Err(Error::Dimension(format!(
            "data has {} agents, topology {}",
            data.m(),
            top.m()
        )));
    }
    if let Some(bad) = epsilons.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::Config(format!("epsilon must be positive, got {bad}")));
    }
    for p in perturbations {
        p.validate(data)?;
    }
    let composition = opts.composition.unwrap_or(Composition::default_for_rank(cfg.rank));
    let round_data = if cfg.rank == 1 {
        vec![data.clone()]
    } else {
        let run = run_ddppm(data, top, cfg)?;
        round_datasets(data, &run, cfg.iterations)?
    };
    let m = data.m();
    let wc = top.w_power();
    let views: Vec<Vec<RoundView>> = (0..m)
        .map(|i| {
            round_data
                .iter()
                .enumerate()
                .map(|(l, dl)| {
                    let model = observer_model(dl, wc, cfg, i)?;
                    let own = (0..=opts.realizations)
                        .map(|r| ProjectedRealization::new(dl.block(i), &realization(dl, cfg, i, l, r)))
                        .collect();
                    Ok(RoundView {
                        model,
                        data: dl.clone(),
                        own,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| {
            perturbations
                .iter()
                .enumerate()
                .filter(move |(_, p)| p.agent != i)
                .map(move |(k, _)| (i, k))
        })
        .collect();
    let results: Vec<Vec<DeltaBound>> = pairs
        .par_iter()
        .map(|&(i, k)| pair_deltas(&views[i], &perturbations[k], wc, cfg, epsilons, opts, composition))
        .collect::<Result<_>>()?;

    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let per_observer: Vec<ObserverDelta> = (0..m)
                .map(|i| {
                    let mut best = ObserverDelta {
                        agent: i,
                        delta: 0.0,
                        beta_star: None,
                        perturbation_id: None,
                        infinite: false,
                    };
                    for (&(obs, k), bounds) in pairs.iter().zip(&results) {
                        let b = bounds[e];
                        if obs == i && (best.perturbation_id.is_none() || b.delta > best.delta) {
                            best = ObserverDelta {
                                agent: i,
                                delta: b.delta,
                                beta_star: b.beta_star,
                                perturbation_id: Some(perturbations[k].id.clone()),
                                infinite: b.infinite,
                            };
                        }
                    }
                    best
                })
                .collect();
            let top_observer = per_observer.iter().fold(None::<&ObserverDelta>, |acc, o| match acc {
                Some(a) if a.delta >= o.delta => Some(a),
                _ => Some(o),
            });
            PrivacyReport {
                epsilon,
                delta: top_observer.map_or(0.0, |o| o.delta),
                perturbation_id: top_observer.and_then(|o| o.perturbation_id.clone()),
                per_observer,
                composition,
                rounds: round_data.len(),
                perturbations: perturbations.len(),
                config_digest: None,
            }
        })
        .collect())
}

pub fn audit_privacy(
    data: &PartitionedDataset,
    top: &Topology,
    cfg: &RunConfig,
    epsilon: f64,
    perturbations: &[Perturbation],
    opts: &AuditOptions,
) -> Result<PrivacyReport> {
    let mut reports = audit_privacy_many(data, top, cfg, &[epsilon], perturbations, opts)?;
    Ok(reports.remove(0))
}
