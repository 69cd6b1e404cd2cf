//! Energy-conserving continuous Galerkin solver for the vectorial modified
//! Korteweg–de Vries equation
//!
//! ```text
//! u_t + (3/2)|u|² u_x + u_xxx = 0,   u : [0, L) × ℝ → ℝᵈ  (periodic)
//! ```
//!
//! together with closed-form soliton benchmarks, invariant monitors, a
//! convergence harness and an exact symbolic checker for conservation laws.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod config;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod field;
pub mod jet;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod output;
pub mod quadrature;
pub mod space;
pub mod stepper;

pub use assembly::{BlockSystem, DiscreteState, SystemLayout};
pub use error::{Error, Result};
pub use field::{FeField, Norms};
pub use mesh::Mesh;
pub use quadrature::{gauss_rule, QuadratureRule};
pub use space::{LagrangeSpace, NodeFamily};
