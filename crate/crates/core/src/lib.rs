//! Robust symmetric multisecant quasi-Newton updates.
//!
//! The centerpiece is a closed-form solver for the regularized symmetric
//! Procrustes problem
//!
//! ```text
//! Z* = argmin_{Z = Zᵀ} ‖Z A − D‖²_F + (λ/2) ‖Z − Z_ref‖²_F
//! ```
//!
//! kept in factored form so that `Z* v` and `Z*⁻¹ v` cost `O(m² d)`. Feeding
//! it the secant blocks `ΔX`, `ΔG` of an optimizer gives symmetric Hessian
//! (Type-I) or inverse-Hessian (Type-II) estimates that satisfy many secant
//! equations at once, and the regularization makes them stable when the
//! gradients are noisy.
//!
//! Modules:
//! - [`secant_store`]: sliding window of iterates/gradients and the `ΔX`, `ΔG` blocks.
//! - [`rsp`]: the Procrustes solver, PSD projection and a brute-force reference solver.
//! - [`updates`]: search directions for every supported quasi-Newton family.
//! - [`objectives`]: quadratics, ridge/logistic regression, SAGA, corruption and recovery metrics.
//! - [`linesearch`]: unit, dichotomy and Armijo step policies.
//! - [`driver`]: the optimization loop and its per-iteration log.
//!
//! ```
//! use nalgebra::DVector;
//! use rsqn::driver::{minimize, OptimizerConfig, Termination};
//! use rsqn::objectives::{synthetic_quadratic, Objective};
//! use rsqn::updates::{Method, UpdateKind};
//!
//! let obj = synthetic_quadratic(8, 10.0, 7);
//! let kind = UpdateKind::new(Method::SymMultisecantII).with_reference_scale(obj.lipschitz());
//! let config = OptimizerConfig::new(kind, 8).with_max_iters(20).with_tol(1e-10);
//! let run = minimize(&obj, &DVector::zeros(8), &config, |_| {}).unwrap();
//! assert_eq!(run.termination, Termination::Converged);
//! ```

pub mod driver;
pub mod error;
pub mod linalg;
pub mod linesearch;
pub mod objectives;
pub mod rsp;
pub mod secant_store;
pub mod updates;

pub use error::{Error, Result};
pub use linalg::LinearOperator;
pub use nalgebra::{DMatrix, DVector};
