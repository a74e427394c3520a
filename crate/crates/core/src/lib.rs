//! Backward Euler–Maruyama simulation of stiff SDEs with one-sided Lipschitz
//! drift, together with the statistics used to study its ergodic behaviour.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod fporacle;
pub mod linalg;
pub mod model;
pub mod par;
pub mod solver;

pub use ensemble::{
    run_coupled_pair, run_ensemble, run_nested, run_refined_pair, EnsembleOptions, EnsembleRun,
    EnsembleSnapshot, EnsembleSpec, InitialState, RefinementSpec, RngPlan,
};
pub use error::{Error, Result};
pub use fporacle::{ks_against_density, solve_stationary_1d, StationaryDensity1D};
pub use linalg::Matrix;
pub use model::{derive_thresholds, validate_assumptions, AssumptionCertificate, CertificateInputs, SdeModel};
pub use par::Exec;
pub use solver::{bem_step, em_step, NewtonConfig, Scheme, StepOperator};
