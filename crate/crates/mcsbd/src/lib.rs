//! Multi-channel sparse blind deconvolution (MCS-BD).
//!
//! Given p circular convolutions `yᵢ = a ⊛ xᵢ` of one invertible kernel `a`
//! with sparse signals `xᵢ`, this crate recovers both — up to the inherent
//! signed-shift ambiguity — by a two-stage method:
//!
//! 1. whiten the observations with a data-driven spectral preconditioner and
//!    run vanilla Riemannian gradient descent on the sphere against a
//!    sparsity-promoting loss (Huber by default, ℓ¹ and negated ℓ⁴ are also
//!    available), which lands within O(μ) of a solution;
//! 2. refine to exactness with a projected subgradient method for an
//!    ℓ¹ rounding program on the tangent slice, using geometrically decaying
//!    stepsizes.
//!
//! The same pipeline is available for 2D grids (`solver2d`), and the
//! `experiments` module reproduces the standard synthetic studies
//! (convergence traces, success-vs-sparsity curves, (p, n) phase
//! transitions, geometry probes) with deterministic, seed-derived CSVs.
//!
//! See the crate examples for runnable entry points, one per capability.

pub mod error;
pub mod experiments;
pub mod fftconv;
pub mod io;
pub mod losses;
pub mod model;
pub mod precond;
pub mod recover;
pub mod rounding;
pub mod solver2d;
pub mod sphere;

pub use error::{McsbdError, Result};
