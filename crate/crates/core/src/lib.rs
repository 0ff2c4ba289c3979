//! Numerical workbench for the action-angle dual of the trigonometric
//! BC(n) Sutherland system: builds the gauge slice `(λ, ϑ) ↦ point` and
//! checks that `(λ, ϑ)` are Darboux coordinates for the reduced form.

pub mod algebra;
pub mod constraints;
pub mod crosssection;
pub mod error;
pub mod fault;
pub mod lemmas;
pub mod linalg;
pub mod observables;
pub mod sampling;
pub mod symplectic;
pub mod verify;

pub use crosssection::{CrossSection, DualCoordinates, ModelParams, PhasePoint};
pub use error::{Error, Result};
pub use fault::Faults;
pub use observables::TangentVector;
