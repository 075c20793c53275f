//! Monotone time-stepping schemes for path-dependent parabolic PDEs.

pub mod error;
pub mod grid;
pub mod harness;
pub mod model;
pub mod path;
pub mod regression;
pub mod verification;

pub use error::{Error, Result};
pub use grid::{
    backward_solve, Axis, Boundary, Domain, SchemeConfig, SchemeKind, SliceOperator, StateGrid,
    ValueSlice,
};
pub use model::{GameSpec, PpdeProblem};
pub use path::{DiscretePath, FeatureRule, FeatureState, StateRef};
pub use harness::{
    run_convergence, run_solve, run_verification_suite, ConvergenceReport, ConvergenceRow,
    RunConfig, VerificationReport,
};
pub use regression::{ftw_solve, FtwConfig, FtwResult};
