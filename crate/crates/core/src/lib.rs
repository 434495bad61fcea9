//! Stage-structured annual-plant population dynamics with a hidden seed bank:
//! exact simulation, complete-data estimators, and incomplete-data inference
//! through the Poisson rosette-intensity recursion.
//!
//! The crate is organized along the pipeline:
//!
//! * [`stochastic`] — seedable distribution sampling with independent
//!   per-population streams;
//! * [`dynamics`] — the five-stage branching model with seed immigration,
//!   simulated exactly, plus the observable projection;
//! * [`io`] — CSV formats for datasets, estimate reports and diagnostics;
//! * [`complete`] — closed-form and conditional-least-squares estimators
//!   when every stage is observed;
//! * [`intensity`] — the identifiable transform `phi`, the intensity
//!   recursion and its analytic gradients, Fisher information, and a direct
//!   simulator of the observed process;
//! * [`identifiability`] — which functionals are estimable at each horizon;
//! * [`fit`] — maximum-likelihood fits of `phi` (reduced and full);
//! * [`experiment`] — the configuration-driven overdispersion robustness
//!   study.

#![allow(clippy::needless_range_loop)]

pub mod complete;
pub mod dynamics;
pub mod experiment;
pub mod fit;
pub mod identifiability;
pub mod intensity;
pub mod io;
pub mod stochastic;

pub use complete::{
    cls_germination, cls_reproduction, cls_survival, complete_loglik_poisson, estimate_cd,
    estimate_complete, estimate_initial, CompleteEstimates, InferenceError,
};
pub use dynamics::{
    init_population, observe, simulate, step, CompleteDataset, DemographicParams, DynamicsError,
    ObservedDataset, PopulationPath, PopulationState,
};
pub use experiment::{
    run_table_experiment, write_experiment_csv, DeviationTarget, ExperimentConfig, ExperimentError,
    ExperimentRow, FitMode,
};
pub use fit::{
    fit_phi_full, fit_phi_reduced, FitError, FitOptions, FullFitResult, InitStrategy, PartialFit,
    PhiEstimateReport,
};
pub use identifiability::{identifiable_set, IdentifiabilityReport};
pub use intensity::{
    cycle_constant, fisher_matrix, incomplete_loglik, lambda_expanded, lambda_gradient,
    lambda_sequence, simulate_via_intensity, IdentifiableParams, IntensityError, IntensityPath,
    PhiBounds,
};
pub use stochastic::{
    derive_seed, sample_binomial, sample_count, sample_multinomial, sample_negative_binomial,
    sample_offspring_total, sample_poisson, DistributionKind, DistributionSpec, RngHandle,
    SampleError,
};
