//! Evidential value of three-cell ANOVA-regression summaries.
//!
//! Given only the per-cell size, the three cell means and the three cell
//! standard deviations of a published study, this crate computes the
//! likelihood ratio in favour of correlated measurement errors (a signature
//! of fabricated data) against independent errors, together with the
//! standardized contrast statistics, the threshold on `|Z_V|` that a given
//! value corresponds to, Monte Carlo calibration under independence and the
//! combination of several independent studies.
//!
//! Modules:
//!
//! * [`ledger`]: study summaries, CSV/JSON ingestion and validation;
//! * [`geometry`]: the correlation elliptope and the variance infimum;
//! * [`evidence`]: the evidential value and derived statistics;
//! * [`simulator`]: null and copying-mechanism simulation;
//! * [`report`]: ledger evaluation and rendering.
//!
//! The `parallel` feature (on by default) runs the grid search, per-study
//! evaluation and Monte Carlo replications on rayon; see [`Execution`].

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evidence;
pub mod geometry;
pub mod ledger;
pub mod parallel;
pub mod report;
pub mod simulator;

pub use error::{Error, Result};
pub use evidence::{
    combine, evidential_value, null_tail_probability, plugin_density, threshold_ratio,
    z_c_statistic, z_v_statistic, Bound, Case, CombinedEvidence, EvidentialValue, Mode,
};
pub use geometry::{
    closed_form_infimum_sq, combined_sd, elliptope_det, exact_infimum_sq, paper_lower_bound_sq,
    variance_profile, CorrelationTriple, VarianceProfile,
};
pub use ledger::{parse_ledger, validate, StudyLedger, StudySummary};
pub use parallel::Execution;
pub use simulator::{null_exceedance, simulate_study, ModelParams, NullShape, SimulationReport};
