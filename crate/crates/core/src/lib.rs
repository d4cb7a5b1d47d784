//! Numerical lab for `Γu′ + u = D(u,u)` on a finite spectral truncation.
//!
//! The crate is organized bottom-up:
//!
//! - [`spectral`]: modes `(γ_i, μ_i)`, the weighted `ℓ²` norm and the stable/unstable split.
//! - [`function_space`]: grid functions on `[0, x_max]`, the reverse norm and its weighted variant.
//! - [`linear_ops`]: the stable semigroup `T_s` and the resolvent `K = (Γ∂_x + Id)^{-1}`.
//! - [`bilinear`]: kernel bilinear maps, `|D|`, Hilbert–Schmidt norms and the closure bracket `𝒮(α)`.
//! - [`counterexamples`]: the rotation and Hadamard families showing the closure conditions are not automatic.
//! - [`manifold`]: the fixed-point solve for the stable-manifold graph and its diagnostics.

pub mod bilinear;
pub mod counterexamples;
pub mod error;
pub mod function_space;
mod lattice;
pub mod linear_ops;
pub mod manifold;
pub mod spectral;

pub use bilinear::{BilinearMap, HsBoundReport, Kernel, KernelSpec, Rank1Term, SBracket, TLambdaNorms};
pub use counterexamples::{
    ce2_s_values, growth_ratio, hadamard_family, perron_pair, Ce2Values, MatvecMode, PerronPair, RotationFamily,
};
pub use error::{Error, Result};
pub use function_space::{reverse_norm, sup_profile, weighted_norm, GridFunction, GridSpec, XGrid};
pub use lattice::SearchBudget;
pub use linear_ops::{ode_residual, resolvent_apply, semigroup_apply, ResolventPlan};
pub use manifold::{
    phi_apply, solve, ManifoldReport, SolveRequest, SolverConfig, SolverOptions,
};
pub use spectral::{Mode, ModelSpec, Side, SpectralModel, SpectralVector};
