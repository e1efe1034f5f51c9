//! Numerical toolkit for mean field type control with congestion.
//!
//! The crate discretizes the pair of convex problems
//!
//! * maximize `J(φ, γ) = ∫∫ K(x, γ, Dφ) + ∫ m0·φ(0)` subject to
//!   `∂ₜφ + νΔφ ≥ γ`, `φ(T) ≤ u_T`, and
//! * minimize `ℬ(m, z) = ∫∫ L̃(x, m, z) + ∫ m(T)·u_T` subject to the
//!   Fokker–Planck constraint `∂ₜm − νΔm + div z = 0`, `m(0) = m0`,
//!
//! on a periodic space–time grid, solves the saddle point with a
//! primal–dual hybrid gradient method, and certifies the output through the
//! duality gap and the weak-solution conditions of the coupled HJB/FP system.
//! A McKean–Vlasov particle simulator cross-checks the result.

pub mod error;
pub mod extended;
pub mod fourier;
pub mod grid;
pub mod io;
pub mod mckv;
pub mod model;
pub mod pointwise;
pub mod solver;
pub mod spatial;
pub mod transport;
pub mod variational;

pub use error::{MfcError, Result};
pub use extended::ExtReal;
pub use grid::{SpaceTimeField, Staggering, TorusGrid, VectorField};
pub use model::{audit_assumptions, AuditReport, AuditSampling, CongestionModel};
pub use spatial::SpatialFn;
