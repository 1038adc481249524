//! Certifiable relative pose estimation between two calibrated views.
//!
//! The pipeline runs a linear initializer, refines on SO(3) × S² with a
//! Riemannian trust-region method, and then tries to certify global optimality
//! with closed-form Lagrangian dual candidates. A graduated non-convexity
//! wrapper handles outliers.

pub mod certifier;
pub mod error;
pub mod geometry;
pub mod io;
pub mod manifold;
pub mod robust;
pub mod solver;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use certifier::{certify, Certificate, CertifierOptions, CertificateStatus, Relaxation};
pub use error::{Error, Result};
pub use geometry::{
    BearingPair, CorrespondenceSet, DataMatrix, EssentialMatrix, RelativePose, RotationMatrix,
    TranslationDirection,
};
pub use robust::{robust_estimate, GncConfig, RobustResult};
pub use solver::{estimate, refine_on_manifold, Estimate, SolveReport, SolverOptions};
