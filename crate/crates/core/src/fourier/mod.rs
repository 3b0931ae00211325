//! Truncated Fourier series on the d-torus.
//!
//! A [`FourierField`] stores the coefficients of `Σ_k f_k e^{2πik·θ}` for all
//! `k` in the ℓ1 ball `‖k‖ ≤ K`. All products are direct convolutions
//! re-truncated to that ball.

mod field;
mod json;
mod window;

pub use field::{compose_all, neumann_inverse_apply, neumann_term_count, FourierField};
pub use json::{FieldJson, ModeJson};
pub use window::{MultiIndex, Window};

pub(crate) use window::dot_i32;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold below which coefficients are dropped after products.
pub const DEFAULT_DROP_TOL: f64 = 1e-16;

/// Default cap on the total order in [`FourierField::compose_displacement`].
pub const DEFAULT_ORDER_CAP: usize = 30;

#[derive(Debug, Error)]
pub enum FourierError {
    #[error("mode {k} lies outside the window of radius {radius}")]
    ModeOutOfWindow { k: MultiIndex, radius: u32 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("composition series not converged at order {order} (last term {last_term:.3e})")]
    NonConvergence { order: usize, last_term: f64 },
    #[error("Neumann series diverging after {terms} terms (term norm {last_norm:.3e})")]
    Divergence { terms: usize, last_norm: f64 },
    #[error("non-finite coefficient at mode {0}")]
    NonFinite(MultiIndex),
    #[error("invalid field description: {0}")]
    Invalid(String),
}

/// Weighted ℓ1 norms: `Plain(r)` is `Σ‖f_k‖₁ e^{r‖k‖}`, `Prime(r)` adds the
/// factor `1 + 2π‖k‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "r", rename_all = "snake_case")]
pub enum NormKind {
    #[serde(rename = "plain_r")]
    Plain(f64),
    #[serde(rename = "prime_r")]
    Prime(f64),
}

impl NormKind {
    /// Panics unless `r > 0`.
    pub fn plain(r: f64) -> Self {
        assert!(r > 0.0, "analyticity radius must be positive, got {r}");
        NormKind::Plain(r)
    }

    /// Panics unless `r > 0`.
    pub fn prime(r: f64) -> Self {
        assert!(r > 0.0, "analyticity radius must be positive, got {r}");
        NormKind::Prime(r)
    }

    pub fn radius(&self) -> f64 {
        match *self {
            NormKind::Plain(r) | NormKind::Prime(r) => r,
        }
    }
}
