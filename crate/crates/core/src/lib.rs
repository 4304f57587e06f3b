//! Bismut-type gradient estimators for semi-linear stochastic functional
//! differential equations on a finite Galerkin truncation.
//!
//! The pieces, bottom up: [`model`] holds the coefficients, [`pathsim`]
//! integrates the segment process, [`sensitivity`] builds derivative processes
//! and integrands, [`bismut`] turns them into Monte Carlo estimators, and
//! [`oracles`], [`inequalities`] and [`diagnostics`] check the results.

pub mod bismut;
pub mod diagnostics;
pub mod error;
pub mod inequalities;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod oracles;
pub mod pathsim;
pub mod segment;
pub mod sensitivity;

pub use bismut::{
    estimate_gradient_additive, estimate_gradient_bismut, estimate_gradient_multiplicative,
    estimate_semigroup, ito_weight, Diagnostics, GradientEstimate, Method,
};
pub use error::{Error, Result};
pub use inequalities::{
    check_entropy_bound, check_gradient_bound_additive, check_gradient_bound_multiplicative,
    check_harnack, strong_feller_smoke, ImpliedConstantReport, StrongFellerReport,
};
pub use linalg::Matrix;
pub use mc::{combined_se, McConfig, Samples};
pub use model::{
    eval_drift, eval_drift_derivative, eval_sigma, eval_sigma_derivative, eval_sigma_inverse,
    normalize_pseudocontractive, semigroup_apply, validate_assumptions, AssumptionReport,
    DiffusionSpec, DriftSpec, ModelSpec, NoiseKind, TestFunctional,
};
pub use oracles::{
    analytic_linear_gradient, default_fd_epsilon, fd_gradient, ibp_residual, pathwise_gradient,
    IbpResidual,
};
pub use pathsim::{
    integrate_mild, integrate_shifted, make_grid, picard_reference, sample_noise, segment_at,
    GridSpec, NoiseBundle, Trajectory,
};
pub use segment::{SegmentPath, SegmentSpec, SegmentView};
pub use sensitivity::{
    additive_hdot, control_function, malliavin_path, multiplicative_hdot, tangent_path,
    upsilon_path, z_path, AuxPath, AuxRole, ControlFunction, ControlKind, IntegrandPath,
};
