//! Numerical core for joint template-image reconstruction and motion
//! estimation under a transport-equation constraint.
//!
//! A template image `f0` is carried along the flow of a time-dependent
//! velocity field `v` (intensity-preserving action `f(t) = f0 ∘ φ_{t,0}`),
//! observed at a few times through sparse-angle parallel-beam projections,
//! and both are recovered by minimizing
//!
//! ```text
//! J(f0, v) = 1/T Σ_i ( ‖T_i f(t_i) − g_i‖² + μ₂ ∫_0^{t_i} ‖v(τ)‖²_V dτ ) + μ₁ TV(f0)
//! ```
//!
//! Besides the objective and its gradients, the crate exposes the
//! diagnostics used to check the discrete objects numerically: flow group
//! laws, Gronwall and Jacobian bounds, the weak form of the transport
//! equation, renormalization, and mollification.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. File formats, configuration and the command line live in
//! the `stiflow` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod math;
mod par;

pub mod flow;
pub mod grid;
pub mod mollifier;
pub mod objective;
pub mod optimize;
pub mod phantom;
pub mod radon;
pub mod transport;
pub mod velocity;

pub use error::{Error, Result};
pub use math::{det2, spectral_norm, Fingerprint, Mat2, Vec2};

pub use flow::FlowMap;
pub use grid::{ImageGrid, ScalarField, TimeGrid};
pub use mollifier::Mollifier;
pub use objective::{Breakdown, Evaluation, ModelConfig, Problem};
pub use optimize::{minimize, LogRecord, MinimizeResult, ModelState, Status};
pub use phantom::{make_phantom, Phantom, PhantomId};
pub use radon::{AngleSchedule, RadonOperator, Sinogram};
pub use transport::TrajectorySolution;
pub use velocity::{KernelSpec, VectorField, VelocityField};

/// Spatial dimension. The bound formulas keep `N` explicit.
pub const DIM: usize = 2;
