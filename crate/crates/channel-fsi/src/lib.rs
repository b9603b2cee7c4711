//! Finite-difference solver for a penalized fluid–structure interaction
//! problem in a two-dimensional channel with one elastic wall.
//!
//! The moving channel `Ω(h) = {0 < x₁ < L, 0 < x₂ < h(x₁,t)}` is mapped onto
//! the fixed reference rectangle `D = (0,L) × (0,1)` by `x₂ = y₂·h(y₁,t)`.
//! All fields live on a uniform collocated grid over `D`:
//!
//! * `u = (u₁,u₂)` — transformed fluid velocity,
//! * `q` — kinematic pressure (pressure/ρ), zero quadrature mean over `D`,
//! * `η`, `σ = ∂_tη` — displacement and velocity of the elastic wall at
//!   `y₂ = 1`.
//!
//! The coupled system is a penalized/relaxed form of incompressible
//! Navier–Stokes with a viscoelastic string wall: the kinematic coupling
//! `u₂ = σ` on the wall is imposed through a penalty `κ(u₂ − σ)`, and the
//! incompressibility constraint is relaxed to the elliptic pressure equation
//! `−ε∆q + div_h u = 0` with zero-mean `q` (artificial compressibility).
//!
//! Module map:
//!
//! * [`geometry`] — wall deformation histories `h = R₀ + δ`, admissibility
//!   checks, and the pointwise transformation algebra (Piola matrix `R`,
//!   Jacobian `J`, error matrices) between two deformed domains.
//! * [`operators`] — discrete transformed operators on `D`: `div_h`, the
//!   deformation tensor `e_h`, the viscous form, the convective trilinear
//!   form `b_h` with its boundary corrections, and the ε-pressure form.
//! * [`fluid`] — backward-Euler stepper for the transformed momentum/pressure
//!   system with Picard-linearized convection.
//! * [`structure`] — implicit stepper for the clamped viscoelastic string.
//! * [`coupling`] — the geometry-to-solution map `F` (full space–time solve
//!   on a frozen deformation) and the global fixed-point iteration
//!   `η^k = F(η^{k−1})` with contraction monitoring.
//! * [`analysis`] — numerical verification of the transformation identities,
//!   continuous-dependence functionals, Korn constant, trace-inequality
//!   ratios, and the integral equicontinuity estimate.
//! * [`config`] / [`io`] — plain-text configuration, CSV/VTK output.
//!
//! The crate is deliberately `f64`-only: the diagnostics assert identity
//! residuals near machine precision, which has no single-precision analogue.

// Guards of the form `!(x > 0.0)` are intentional: unlike `x <= 0.0` they
// also trip on NaN, which is exactly what input validation wants.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod coupling;
pub mod fluid;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod structure;

pub use config::ModelConfig;
pub use coupling::{global_iterate, IterationReport, Trajectory};
pub use geometry::DeformationHistory;
pub use operators::{FlowState, Grid2d};
pub use structure::WallState;

use thiserror::Error;

/// Unified error type for solver, geometry, and I/O failures.
///
/// The CLI maps variants onto process exit codes; library callers can match
/// on them to distinguish data problems (admissibility, divergence) from
/// genuine failures (singular systems, unreadable files).
#[derive(Debug, Error)]
pub enum FsiError {
    /// Array shapes or grid/time dimensions do not match.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input values outside the mathematical domain of an operation
    /// (nonpositive deformation, τ off the time grid, …).
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear solve failed or its residual exceeded the requested
    /// tolerance.
    #[error("linear solver failure: {message} (residual {residual:.3e})")]
    Solver { message: String, residual: f64 },

    /// The deformation left the admissible set (bounds α ≤ h ≤ 1/α or the
    /// slope/speed bound K).
    #[error("admissibility violation: {0}")]
    Admissibility(String),

    /// The global fixed-point iteration stopped contracting.
    #[error("fixed-point divergence: {0}")]
    Divergence(String),

    /// Configuration syntax or constraint error.
    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    /// File-system failure while reading input or writing reports.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, FsiError>;
