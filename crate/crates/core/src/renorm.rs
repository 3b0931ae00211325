//! The renormalisation step `R = F ∘ T ∘ U`: eliminate far-from-resonance
//! modes, pull back by `T`, rescale time.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{choose_params, BasisError, KTBasis};
use crate::elimination::{eliminate, ElimError, EliminationConfig};
use crate::fourier::{FourierField, MultiIndex, NormKind};
use crate::linalg;
use crate::resonance::{boundary_modes, project, Part, ResonanceParams};

#[derive(Debug, Error)]
pub enum RenormError {
    #[error("mode {k} maps to {image}, outside the window of radius {radius}")]
    WindowOverflow {
        k: MultiIndex,
        image: MultiIndex,
        radius: u32,
    },
    #[error("rescale factor |omega_bar . E(X)| = {value:.3e} below the bound {min:.3e}")]
    RescaleDegenerate { value: f64, min: f64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Elimination(#[from] ElimError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// Divide by `ω̄·E(X̃)`.
    MeanDual,
    /// Multiply by `λ₁`.
    Lambda1,
}

/// What to do with resonant modes whose pullback image leaves the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    Error,
    /// Drop them and report the dropped mass.
    Drop,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RenormConfig {
    pub basis: KTBasis,
    pub params: ResonanceParams,
    /// Carries the radii `ρ` and `ρ'`.
    pub elim: EliminationConfig,
    #[serde(rename = "K")]
    pub k: u32,
    pub min_rescale: f64,
    pub max_iters: usize,
    pub rescale_mode: RescaleMode,
    pub overflow: OverflowPolicy,
}

impl RenormConfig {
    /// Validates `κρ < ρ'` and that `σ` is below the basis bound.
    pub fn new(
        basis: KTBasis,
        params: ResonanceParams,
        k: u32,
        rho: f64,
        rho_prime: f64,
    ) -> Result<Self, RenormError> {
        if !(rho_prime > 0.0 && rho_prime < rho) {
            return Err(BasisError::InvalidRadii { rho, rho_prime }.into());
        }
        if params.kappa * rho >= rho_prime {
            return Err(RenormError::Config(format!(
                "kappa * rho = {} must be below rho' = {rho_prime}",
                params.kappa * rho
            )));
        }
        if params.sigma >= basis.sigma_bound() {
            return Err(RenormError::Config(format!(
                "sigma = {} must be below 1/(2|omega_bar|) = {}",
                params.sigma,
                basis.sigma_bound()
            )));
        }
        if params.omega != basis.omega {
            return Err(RenormError::Config(
                "resonance frequency differs from the basis frequency".into(),
            ));
        }
        let near = boundary_modes(&crate::fourier::Window::get(basis.d, k), &params, 1e-9);
        if !near.is_empty() {
            log::warn!(
                "{} window modes lie within 1e-9 of the resonance boundary: {:?}",
                near.len(),
                near
            );
        }
        let elim = EliminationConfig {
            rho,
            rho_prime,
            ..EliminationConfig::default()
        };
        Ok(Self {
            basis,
            params,
            elim,
            k,
            min_rescale: 0.1,
            max_iters: 20,
            rescale_mode: RescaleMode::MeanDual,
            overflow: OverflowPolicy::Drop,
        })
    }

    /// Parameters from [`choose_params`].
    pub fn auto(basis: KTBasis, k: u32, rho: f64, rho_prime: f64) -> Result<Self, RenormError> {
        let params = choose_params(&basis, rho, rho_prime, k)?;
        Self::new(basis, params, k, rho, rho_prime)
    }

    pub fn rho(&self) -> f64 {
        self.elim.rho
    }

    pub fn rho_prime(&self) -> f64 {
        self.elim.rho_prime
    }

    pub fn omega_field(&self) -> FourierField {
        FourierField::constant(&self.basis.omega, self.k)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PullbackReport {
    /// Σ‖X_k‖₁ over non-resonant inputs that were discarded.
    pub dropped_nonresonant: f64,
    /// Σ‖X_k‖₁ over resonant inputs whose image left the window.
    pub dropped_overflow: f64,
    pub overflow_modes: usize,
}

/// `T(X) = T⁻¹ X∘T`: mode `k` moves to `T*k` with coefficient `T⁻¹ X_k`.
pub fn pullback_t(
    x: &FourierField,
    b: &KTBasis,
    p: &ResonanceParams,
    policy: OverflowPolicy,
) -> Result<(FourierField, PullbackReport), RenormError> {
    let w = x.window().clone();
    let mut out = x.zeros_like();
    let mut report = PullbackReport::default();
    for q in x.support() {
        let k = w.mode(q);
        let c = x.coeff_at(q);
        let mass = linalg::l1_norm_c(c);
        if !p.is_resonant(k) {
            report.dropped_nonresonant += mass;
            continue;
        }
        let k64: Vec<i64> = k.iter().map(|&v| v as i64).collect();
        let img: Vec<i32> = linalg::transpose_apply_i64(&b.t, &k64)
            .into_iter()
            .map(|v| i32::try_from(v).unwrap_or(i32::MAX))
            .collect();
        match w.position(&img) {
            Some(target) => {
                out.coeff_at_mut(target).copy_from_slice(&b.apply_t_inv(c));
            }
            None => match policy {
                OverflowPolicy::Error => {
                    return Err(RenormError::WindowOverflow {
                        k: w.multi_index(q),
                        image: MultiIndex(img),
                        radius: w.radius(),
                    })
                }
                OverflowPolicy::Drop => {
                    report.dropped_overflow += mass;
                    report.overflow_modes += 1;
                }
            },
        }
    }
    if report.dropped_nonresonant > 0.0 {
        log::warn!(
            "pullback discarded non-resonant mass {:.3e}",
            report.dropped_nonresonant
        );
    }
    if report.overflow_modes > 0 {
        log::debug!(
            "pullback dropped {} modes leaving the window, mass {:.3e}",
            report.overflow_modes,
            report.dropped_overflow
        );
    }
    Ok((out, report))
}

/// Inverse reindexing: mode `k` moves to `(T*)⁻¹k` with coefficient `T X_k`.
pub fn pushforward_t(x: &FourierField, b: &KTBasis) -> Result<FourierField, RenormError> {
    let w = x.window().clone();
    let mut out = x.zeros_like();
    for q in x.support() {
        let k64: Vec<i64> = w.mode(q).iter().map(|&v| v as i64).collect();
        let img: Vec<i32> = linalg::transpose_apply_i64(&b.t_inv, &k64)
            .into_iter()
            .map(|v| i32::try_from(v).unwrap_or(i32::MAX))
            .collect();
        let target = w
            .position(&img)
            .ok_or_else(|| RenormError::WindowOverflow {
                k: w.multi_index(q),
                image: MultiIndex(img.clone()),
                radius: w.radius(),
            })?;
        let c = x.coeff_at(q);
        let tc: Vec<Complex64> =
            b.t.iter()
                .map(|r| r.iter().zip(c).map(|(&m, z)| z * m as f64).sum())
                .collect();
        out.coeff_at_mut(target).copy_from_slice(&tc);
    }
    Ok(out)
}

/// `X / (ω̄·E(X))`, returning the divisor.
pub fn rescale_time(
    x: &FourierField,
    b: &KTBasis,
    min_rescale: f64,
) -> Result<(FourierField, Complex64), RenormError> {
    let s = b.omega_bar_dot(&x.mean());
    if s.norm() < min_rescale {
        return Err(RenormError::RescaleDegenerate {
            value: s.norm(),
            min: min_rescale,
        });
    }
    let mut y = x.scale_complex(s.inv());
    y.set_real(x.is_real() && s.im == 0.0);
    Ok((y, s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iter: usize,
    /// `‖X − ω‖'_ρ` of the output.
    pub norm_prime: f64,
    /// `‖(I − E)X‖'_ρ` of the output.
    pub nonconstant_norm: f64,
    pub mean: Vec<Complex64>,
    /// The time rescaling divisor; `1/λ₁` in `lambda1` mode.
    pub rescale: Complex64,
    /// `‖I⁻ U(X)‖_{ρ'}` left by the elimination.
    pub residual_minus: f64,
    pub mode_count: usize,
    pub dropped_overflow: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepOutput {
    pub field: FourierField,
    pub report: StepReport,
    /// The elimination displacement.
    pub u: FourierField,
    pub rescale: Complex64,
}

/// One application of `R`.
pub fn renorm_step(x: &FourierField, cfg: &RenormConfig) -> Result<StepOutput, RenormError> {
    if x.dim() != cfg.basis.d || x.trunc_radius() != cfg.k {
        return Err(RenormError::Config(format!(
            "field has d = {}, K = {}; config expects d = {}, K = {}",
            x.dim(),
            x.trunc_radius(),
            cfg.basis.d,
            cfg.k
        )));
    }
    let elim = eliminate(x, &cfg.params, &cfg.elim)?;
    let resonant = project(&elim.transformed, &cfg.params, Part::Plus);
    let (pulled, pb) = pullback_t(&resonant, &cfg.basis, &cfg.params, cfg.overflow)?;
    let (mut field, rescale) = match cfg.rescale_mode {
        RescaleMode::MeanDual => rescale_time(&pulled, &cfg.basis, cfg.min_rescale)?,
        RescaleMode::Lambda1 => {
            let l = cfg.basis.lambda1();
            (pulled.scale(l), Complex64::new(1.0 / l, 0.0))
        }
    };
    if x.is_real() {
        field.symmetrize();
    }
    let omega = cfg.omega_field();
    let report = StepReport {
        iter: 0,
        norm_prime: field.sub(&omega).norm(NormKind::Prime(cfg.rho())),
        nonconstant_norm: field.nonconstant().norm(NormKind::Prime(cfg.rho())),
        mean: field.mean(),
        rescale,
        residual_minus: elim.residual,
        mode_count: field.mode_count(),
        dropped_overflow: pb.dropped_overflow,
    };
    Ok(StepOutput {
        field,
        report,
        u: elim.u,
        rescale,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum IterStatus {
    Converged,
    Diverged,
    Maxiter,
    Failed,
}

impl IterStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            IterStatus::Converged => "CONVERGED",
            IterStatus::Diverged => "DIVERGED",
            IterStatus::Maxiter => "MAXITER",
            IterStatus::Failed => "FAILED",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub reports: Vec<StepReport>,
    pub fields: Vec<FourierField>,
    pub status: IterStatus,
    pub error: Option<String>,
}

impl Trajectory {
    pub fn final_field(&self) -> Option<&FourierField> {
        self.fields.last()
    }
}

/// Iterates `R` up to `cfg.max_iters` times; never panics on numerical failure.
///
/// `fields[0]` is the input; `fields[n]` is `Rⁿ(X)`.
pub fn renorm_iterate(x: &FourierField, cfg: &RenormConfig) -> Trajectory {
    let omega = cfg.omega_field();
    let dist = |f: &FourierField| f.sub(&omega).norm(NormKind::Prime(cfg.rho()));
    let initial = dist(x);
    let mut fields = vec![x.clone()];
    let mut reports = Vec::new();
    let mut current = x.clone();
    for n in 1..=cfg.max_iters {
        match renorm_step(&current, cfg) {
            Ok(out) => {
                let mut report = out.report;
                report.iter = n;
                let d = report.norm_prime;
                reports.push(report);
                fields.push(out.field.clone());
                current = out.field;
                if d < 1e-12 {
                    return Trajectory {
                        reports,
                        fields,
                        status: IterStatus::Converged,
                        error: None,
                    };
                }
                if d > 10.0 * initial || !d.is_finite() {
                    return Trajectory {
                        reports,
                        fields,
                        status: IterStatus::Diverged,
                        error: None,
                    };
                }
            }
            Err(e) => {
                return Trajectory {
                    reports,
                    fields,
                    status: IterStatus::Failed,
                    error: Some(e.to_string()),
                }
            }
        }
    }
    Trajectory {
        reports,
        fields,
        status: IterStatus::Maxiter,
        error: None,
    }
}
