//! Resonant and far-from-resonance index sets, and the T-cone condition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{dot_i32, FourierField, MultiIndex, Window};
use crate::linalg::{transpose_apply_f64, transpose_apply_i64, IntMatrix};

#[derive(Debug, Error)]
pub enum ResonanceError {
    #[error("resonance width must satisfy 0 < sigma, got {0}")]
    BadSigma(f64),
    #[error("cone factor must satisfy 0 < kappa < 1, got {0}")]
    BadKappa(f64),
    #[error("cone condition violated: max ratio {:.6} >= kappa {:.6}", report.max_ratio, report.kappa)]
    ConeViolation { report: Box<ConeReport> },
}

/// `(ω, σ, κ)`: frequency, resonance width, and cone contraction factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceParams {
    pub omega: Vec<f64>,
    pub sigma: f64,
    pub kappa: f64,
}

impl ResonanceParams {
    pub fn new(omega: Vec<f64>, sigma: f64, kappa: f64) -> Result<Self, ResonanceError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ResonanceError::BadSigma(sigma));
        }
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(ResonanceError::BadKappa(kappa));
        }
        Ok(Self {
            omega,
            sigma,
            kappa,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn classify(&self, k: &[i32]) -> Class {
        let l1: u32 = k.iter().map(|c| c.unsigned_abs()).sum();
        if dot_i32(k, &self.omega).abs() > self.sigma * l1 as f64 {
            Class::FarFromResonance
        } else {
            Class::Resonant
        }
    }

    pub fn is_resonant(&self, k: &[i32]) -> bool {
        self.classify(k) == Class::Resonant
    }

    /// Relative distance `| |ω·k| − σ‖k‖ | / (σ‖k‖)`; infinite at `k = 0`.
    pub fn boundary_distance(&self, k: &[i32]) -> f64 {
        let l1: u32 = k.iter().map(|c| c.unsigned_abs()).sum();
        if l1 == 0 {
            return f64::INFINITY;
        }
        let edge = self.sigma * l1 as f64;
        (dot_i32(k, &self.omega).abs() - edge).abs() / edge
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    Resonant,
    FarFromResonance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Plus,
    Minus,
}

pub fn classify(k: &MultiIndex, p: &ResonanceParams) -> Class {
    p.classify(k.as_slice())
}

/// `I⁺` (plus) keeps resonant modes, `I⁻` (minus) keeps the rest.
pub fn project(f: &FourierField, p: &ResonanceParams, part: Part) -> FourierField {
    let mut g = f.clone();
    let w = f.window().clone();
    for pos in w.positions() {
        let keep = match part {
            Part::Plus => p.is_resonant(w.mode(pos)),
            Part::Minus => !p.is_resonant(w.mode(pos)),
        };
        if !keep {
            for c in g.coeff_at_mut(pos) {
                *c = num_complex::Complex64::new(0.0, 0.0);
            }
        }
    }
    g
}

/// Window modes whose classification sits within `rel` of the boundary.
pub fn boundary_modes(window: &Window, p: &ResonanceParams, rel: f64) -> Vec<MultiIndex> {
    window
        .positions()
        .filter(|&q| p.boundary_distance(window.mode(q)) < rel)
        .map(|q| window.multi_index(q))
        .collect()
}

/// Window positions in `I⁻`, in window order.
pub fn minus_positions(window: &Window, p: &ResonanceParams) -> Vec<usize> {
    window
        .positions()
        .filter(|&q| !p.is_resonant(window.mode(q)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    /// Maximum of the three estimates below.
    pub max_ratio: f64,
    pub kappa: f64,
    pub ok: bool,
    /// Exact maximum of `‖T*x‖/‖x‖` over the real cone `|ω·x| ≤ σ‖x‖`.
    pub vertex_ratio: f64,
    pub worst_direction: Vec<f64>,
    pub sampled_ratio: f64,
    /// Maximum over resonant integer `k ≠ 0` with `‖k‖ ≤ K`.
    pub lattice_ratio: f64,
    /// Resonant lattice points with ratio at least `κ` (capped at 32 entries).
    pub offending: Vec<MultiIndex>,
}

/// Exact maximum of `‖T*x‖₁` over `{‖x‖₁ = 1, |ω·x| ≤ σ}`.
///
/// The feasible set on each facet of the ℓ1 sphere is a simplex cut by a slab,
/// and the objective is convex, so the maximum sits at a vertex: a simplex
/// vertex inside the slab, or an edge crossing one of the planes `ω·x = ±σ`.
pub fn cone_vertex_max(t: &IntMatrix, omega: &[f64], sigma: f64) -> (f64, Vec<f64>) {
    let d = omega.len();
    let mut best = (f64::NEG_INFINITY, vec![0.0; d]);
    let mut consider = |x: Vec<f64>| {
        let r: f64 = transpose_apply_f64(t, &x).iter().map(|v| v.abs()).sum();
        if r > best.0 {
            best = (r, x);
        }
    };
    // Signed unit vectors s·e_i, indexed 2i (+) and 2i+1 (−).
    let vertex =
        |v: usize| -> (usize, f64) { (v / 2, if v.is_multiple_of(2) { 1.0 } else { -1.0 }) };
    for a in 0..2 * d {
        let (i, si) = vertex(a);
        let wa = si * omega[i];
        if wa.abs() <= sigma {
            let mut x = vec![0.0f64; d];
            x[i] = si;
            consider(x);
        }
        for b in 0..2 * d {
            let (j, sj) = vertex(b);
            if j <= i {
                continue;
            }
            let wb = sj * omega[j];
            if wa == wb {
                continue;
            }
            for c in [-sigma, sigma] {
                let s = (c - wa) / (wb - wa);
                if (0.0..=1.0).contains(&s) {
                    let mut x = vec![0.0f64; d];
                    x[i] = (1.0 - s) * si;
                    x[j] = s * sj;
                    consider(x);
                }
            }
        }
    }
    best
}

/// Checks `‖T*x‖ ≤ κ‖x‖` on the σ-cone around the hyperplane `ω·x = 0`.
///
/// The exact vertex maximum is cross-checked by random sampling of the cone
/// (`n_samples` points) and by every resonant integer index with `‖k‖ ≤ radius`.
pub fn check_cone_inclusion(
    t: &IntMatrix,
    p: &ResonanceParams,
    n_samples: usize,
    radius: u32,
) -> Result<ConeReport, ResonanceError> {
    let report = cone_report(t, p, n_samples, radius);
    if report.ok {
        Ok(report)
    } else {
        Err(ResonanceError::ConeViolation {
            report: Box::new(report),
        })
    }
}

/// As [`check_cone_inclusion`] but returns the report even on violation.
pub fn cone_report(
    t: &IntMatrix,
    p: &ResonanceParams,
    n_samples: usize,
    radius: u32,
) -> ConeReport {
    let d = p.dim();
    let (vertex_ratio, worst_direction) = cone_vertex_max(t, &p.omega, p.sigma);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    let norm2: f64 = p.omega.iter().map(|w| w * w).sum();
    let mut sampled_ratio: f64 = 0.0;
    let mut x = vec![0.0f64; d];
    for _ in 0..n_samples {
        for xi in x.iter_mut() {
            *xi = rng.gen_range(-1.0..1.0);
        }
        // Shift along ω to a random slab height, then normalise in ℓ1.
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        let target = rng.gen_range(-p.sigma..p.sigma) * l1;
        let shift = (dot(&p.omega, &x) - target) / norm2;
        for (xi, wi) in x.iter_mut().zip(&p.omega) {
            *xi -= shift * wi;
        }
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        if l1 == 0.0 || dot(&p.omega, &x).abs() > p.sigma * l1 {
            continue;
        }
        let r: f64 = transpose_apply_f64(t, &x)
            .iter()
            .map(|v| v.abs())
            .sum::<f64>()
            / l1;
        sampled_ratio = sampled_ratio.max(r);
    }

    let w = Window::get(d, radius);
    let mut lattice_ratio: f64 = 0.0;
    let mut offending = Vec::new();
    for q in w.positions() {
        let k = w.mode(q);
        if q == w.zero_position() || !p.is_resonant(k) {
            continue;
        }
        let k64: Vec<i64> = k.iter().map(|&c| c as i64).collect();
        let img: i64 = transpose_apply_i64(t, &k64).iter().map(|v| v.abs()).sum();
        let r = img as f64 / w.l1(q) as f64;
        lattice_ratio = lattice_ratio.max(r);
        if r >= p.kappa && offending.len() < 32 {
            offending.push(w.multi_index(q));
        }
    }

    let max_ratio = vertex_ratio.max(sampled_ratio).max(lattice_ratio);
    ConeReport {
        max_ratio,
        kappa: p.kappa,
        ok: max_ratio < p.kappa,
        vertex_ratio,
        worst_direction,
        sampled_ratio,
        lattice_ratio,
        offending,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
