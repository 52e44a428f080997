//! Exact Gaussian release laws and Rényi-based (ε, δ) auditing.

pub mod audit;
pub mod divergence;
pub mod gaussian;
pub mod observer;
pub mod release;

pub use audit::{
    audit_privacy, audit_privacy_many, default_perturbations, load_perturbations, parse_perturbations, AuditOptions,
    Composition, ObserverDelta, Perturbation, PrivacyReport,
};
pub use divergence::{
    delta_bound, delta_bound_reduced, delta_from_curve, pair_geometry, renyi_divergence_gaussian, DeltaBound,
    DivergenceCurve, PairGeometry, BETA_CAP, BETA_FLOOR,
};
pub use gaussian::{reduce_rank, reduce_rank_joint, GaussianDist};
pub use observer::{observer_model, ObserverModel, ProjectedRealization};
pub use release::{build_release_model, observer_conditional, OwnRealization, ReleaseModel};
