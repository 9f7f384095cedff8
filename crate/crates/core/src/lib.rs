//! Shooting-method solver for the radial quasilinear problem
//!
//! ```text
//! -(r^alpha phi(|u'|) u')' = lambda r^gamma f(u)  in (0, R),   u'(0) = u(R) = 0
//! ```
//!
//! producing the positive solution and the ladder of sign-changing solutions
//! `d_0 > d_1 > d_2 > ...`, along with checks of the energy and growth
//! inequalities the construction relies on.




pub mod cli;
pub mod config;
pub mod diagnostics;
mod dopri;
pub mod error;
pub mod expr;
pub mod ivp;
pub mod nonlinearity;
pub mod phi;
pub mod quadrature;
pub mod report;
pub mod shooting;


pub use diagnostics::{
    check_bounds_suite, check_prop1, check_simon, energy_profile, EnergyProfile,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use expr::ScalarFn;
pub use ivp::{
    integral_residual, integral_residuals, integrate_from, integrate_trajectory, picard_start,
    PicardSegment, ProblemParams, Residual, SolverOptions, Trajectory, TrajectoryStatus,
};
pub use nonlinearity::{validate_f, FFamily, FSpec};
pub use phi::{validate_phi, PhiFamily, PhiSpec};
pub use report::{Check, ValidationReport, Verdict};
pub use shooting::{
    find_d0, find_d_ell, lambda_threshold, solve_problem, zeros_of, PartialShooting,
    ShootingOptions, ShootingResult, ZeroSequence,
};
