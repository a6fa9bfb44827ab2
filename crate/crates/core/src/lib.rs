//! Deterministic velocity-space solvers for the spatially homogeneous
//! Boltzmann equation (hard potentials with angular cutoff) and the Landau
//! equation (hard potentials), together with a functional-diagnostics and
//! inequality-audit engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] — uniform cubic velocity grids, quadrature, finite-difference
//!   calculus, and the `Distribution` state type;
//! * [`functionals`] — moments, entropies, Fisher information, exponential
//!   moments, Lebesgue/Sobolev norms, weighted gradient tails;
//! * [`boltzmann`] — collision kernels, angular quadrature, the gain term
//!   (direct and fast spectral paths), the loss intensity, and the Fisher
//!   dissipation split;
//! * [`landau`] — diffusion/drift coefficient fields, the divergence-form
//!   operator, entropy production, weak-form moment rates, and the
//!   square-root energy split;
//! * [`integrator`] — scenarios, stability limits, steppers, and trajectory
//!   generation with diagnostics;
//! * [`audits`] — quantitative inequality checks evaluated on trajectories,
//!   plus the exact rational exponent bookkeeping;
//! * [`io`] — CSV diagnostics, binary snapshots, manifests, audit reports.
//!
//! Everything is deterministic: identical inputs produce identical output
//! bytes. Reductions use a fixed pairwise summation order and thread-level
//! parallelism is restricted to disjoint writes.

pub mod audits;
pub mod boltzmann;
pub mod error;
pub mod fft;
pub mod functionals;
pub mod grid;
pub mod integrator;
pub mod io;
pub mod landau;
pub mod util;

pub use error::{KineticError, Result};
