//! Transported stochastic direct and indirect effects estimated by TMLE, with a
//! variance-based sensitivity analysis for missing-not-at-random mediator data.

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod error;
pub mod math;
pub mod nuisance;
pub mod rng;
pub mod sensitivity;
pub mod table;
pub mod tmle;

pub use dgp::{
    apply_missingness, generate, generate_with_report, oracle_effects, Mechanism, MissingnessReport,
    MissingnessSpec, OracleEffects, StructuralParams,
};
pub use error::{Error, ErrorClass, Result};
pub use nuisance::{
    fit_gaussian_conditional, fit_logistic, fit_nuisance, mediator_intervention_density, MediatorType,
    NuisanceFit, NuisanceFitter, NuisanceOptions, ParametricFitter, WeightForm,
};
pub use sensitivity::{
    bounded_sie, ci_alpha, sensitivity_bounds, sweep, NullCrossing, SensitivityConfig, SensitivityCurve,
    SweepGrid, SweepResult,
};
pub use table::{Column, Observation, ObservationTable};
pub use tmle::{
    compute_targeting_weights, estimate_effects, estimate_psi, estimate_sde, estimate_sie, marginalize,
    target_outcome_model, EffectEstimate, EffectKind, PsiEstimate,
};
