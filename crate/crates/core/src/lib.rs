//! Direct and inverse spectral problems for the Dirac operator
//! `B d/dx + Q(x)` on `(0, 1)` with `Q = [[q1, q2], [q2, −q1]]`, `q1, q2 ∈ L_p`.
//!
//! The direct side computes the spectra `(λ_n)` of the problem with
//! `u₂(0) = u₁(1) = 0` and `(μ_n)` of the problem with `u₂(0) = u₂(1) = 0`,
//! plus the norming constants `α_n = ‖c(·, λ_n)‖⁻²`. The inverse side rebuilds
//! `Q` from `(λ_n, α_n)` (or from the two spectra) by solving the Krein
//! equation `R̃(x,t) + H(x−t) + ∫₀ˣ R̃(x,s) H(s−t) ds = 0` and reading off
//! `Q(x) = R̃(x, 0) J B`.

pub mod cauchy;
pub mod direct_spectra;
pub mod error;
pub mod fourier_algebra;
pub mod glm_krein;
pub mod grid;
pub mod mat2;
pub mod potential;
pub mod spectral_products;
pub mod transform_kernel;

pub use error::{Error, Result};
pub use grid::Grid;
pub use mat2::{Mat2, Vec2};
pub use potential::Potential;
