//! Elimination of far-from-resonance modes by a near-identity change of
//! variables `U = id + u`.
//!
//! The unknown `u` lives on `I⁻` and solves `F(u) = 0` with
//! `F(u) = I⁻ (I + Du)⁻¹ [ω + f∘(id + u)]`. The solver follows the homotopy
//! `F(u_λ) = (1 − λ) F(0)`, integrating `du/dλ = −DF(u)⁻¹ F(0)` with RK4
//! from `λ = 0` to `1`, then polishes with Newton steps.

mod gmres;

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::{
    compose_all, dot_i32, neumann_inverse_apply, FourierError, FourierField, MultiIndex, NormKind,
    Window,
};
use crate::resonance::{minus_positions, project, Part, ResonanceParams};

#[derive(Debug, Error)]
pub enum ElimError {
    #[error("mode {0} is resonant; the small-divisor inverse is only defined on far-from-resonance modes")]
    ResonantInput(MultiIndex),
    #[error("linear solver diverged: {0}")]
    SolverDiverged(String),
    #[error("support grew to {modes} modes, over the allowed {limit:.0}")]
    SupportGrowth { modes: usize, limit: f64 },
    #[error(transparent)]
    Fourier(#[from] FourierError),
}

/// How linear systems with `DF(u)` are solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Krylov (GMRES) solve of the truncated system, preconditioned by the
    /// small-divisor inverse; dense LU for `DF(0)` in [`df0_solve`].
    Direct,
    /// The series `Σ (I − DF(u)M)^n` with `M = −(D·ω)⁻¹`, which at `u = 0`
    /// is the Neumann series for `DF(0)⁻¹`.
    Neumann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EliminationConfig {
    pub lambda_steps: usize,
    pub newton_polish: usize,
    pub residual_tol: f64,
    pub linsolve: LinearSolver,
    /// Upper bound on intermediate mode counts, as a multiple of the input's.
    pub max_support_growth: f64,
    /// Radius for the elimination residual norm.
    pub rho_prime: f64,
    /// Radius for the input norm in the theorem-ball diagnostic.
    pub rho: f64,
    pub order_cap: usize,
    /// Relative stopping threshold for composition and Neumann series.
    pub series_tol: f64,
    pub neumann_max_terms: usize,
    pub krylov_tol: f64,
    pub krylov_restart: usize,
    pub krylov_max_iter: usize,
    /// Newton steps allowed beyond `newton_polish` when the residual is still above tolerance.
    pub max_extra_newton: usize,
}

impl Default for EliminationConfig {
    fn default() -> Self {
        Self {
            lambda_steps: 8,
            newton_polish: 2,
            residual_tol: 1e-12,
            linsolve: LinearSolver::Direct,
            max_support_growth: 1e3,
            rho_prime: 0.5,
            rho: 0.6,
            order_cap: crate::fourier::DEFAULT_ORDER_CAP,
            series_tol: 1e-19,
            neumann_max_terms: 400,
            krylov_tol: 1e-15,
            krylov_restart: 60,
            krylov_max_iter: 600,
            max_extra_newton: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomotopyPoint {
    pub lambda: f64,
    /// `‖F(u_λ)‖_{ρ'}`.
    pub residual: f64,
    /// `(1 − λ)‖F(0)‖_{ρ'}`.
    pub expected: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EliminationResult {
    pub u: FourierField,
    pub transformed: FourierField,
    /// `‖I⁻ transformed‖_{ρ'}`.
    pub residual: f64,
    /// `‖I⁻ transformed‖_ρ`, reported alongside.
    pub residual_rho: f64,
    pub theorem_radius: f64,
    pub inside_theorem_ball: bool,
    pub history: Vec<HomotopyPoint>,
    /// Whether every interior homotopy point stayed within 10% of `(1 − λ)‖F(0)‖`.
    pub tracking_ok: bool,
    pub newton_steps: usize,
}

/// The truncated `I⁻` coefficient space, flattened as `(position, component)`.
struct MinusSpace {
    window: Arc<Window>,
    positions: Vec<usize>,
    /// `2πi k·ω` at each position.
    divisors: Vec<Complex64>,
    dim: usize,
}

impl MinusSpace {
    fn new(window: &Arc<Window>, p: &ResonanceParams) -> Self {
        let positions = minus_positions(window, p);
        let divisors = positions
            .iter()
            .map(|&q| Complex64::new(0.0, 2.0 * PI * dot_i32(window.mode(q), &p.omega)))
            .collect();
        Self {
            window: window.clone(),
            positions,
            divisors,
            dim: window.dim(),
        }
    }

    fn len(&self) -> usize {
        self.positions.len() * self.dim
    }

    fn flatten(&self, f: &FourierField) -> Vec<Complex64> {
        let mut v = Vec::with_capacity(self.len());
        for &q in &self.positions {
            v.extend_from_slice(f.coeff_at(q));
        }
        v
    }

    fn unflatten(&self, v: &[Complex64]) -> FourierField {
        let mut f = FourierField::with_components(self.window.clone(), self.dim, false);
        for (i, &q) in self.positions.iter().enumerate() {
            f.coeff_at_mut(q)
                .copy_from_slice(&v[i * self.dim..(i + 1) * self.dim]);
        }
        f
    }

    /// `M y = −(D·ω)⁻¹ y`.
    fn precondition(&self, v: &[Complex64]) -> Vec<Complex64> {
        v.iter()
            .enumerate()
            .map(|(i, z)| -z / self.divisors[i / self.dim])
            .collect()
    }
}

/// `θ ↦ (D·ω)⁻¹ g`: mode-wise division by `2πi k·ω`.
pub fn small_divisor_inverse(
    g: &FourierField,
    p: &ResonanceParams,
) -> Result<FourierField, ElimError> {
    let mut h = g.clone();
    let w = g.window().clone();
    for q in g.support() {
        let k = w.mode(q);
        if p.is_resonant(k) {
            return Err(ElimError::ResonantInput(w.multi_index(q)));
        }
        let div = Complex64::new(0.0, 2.0 * PI * dot_i32(k, &p.omega));
        for c in h.coeff_at_mut(q) {
            *c /= div;
        }
    }
    Ok(h)
}

/// Everything `F` and `DF` need at a fixed `u`.
struct Linearization<'a> {
    u: FourierField,
    /// `(∂_j f)∘(id + u)` for each j.
    dfu: Vec<FourierField>,
    /// `(I + Du)⁻¹ (ω + f∘(id + u))`.
    w: FourierField,
    p: &'a ResonanceParams,
    cfg: &'a EliminationConfig,
}

impl<'a> Linearization<'a> {
    fn new(
        u: &FourierField,
        f: &FourierField,
        p: &'a ResonanceParams,
        cfg: &'a EliminationConfig,
    ) -> Result<Self, ElimError> {
        let d = f.dim();
        let partials: Vec<FourierField> = (0..d).map(|j| f.partial(j)).collect();
        let mut sources = vec![f];
        sources.extend(partials.iter());
        let tols: Vec<f64> = sources
            .iter()
            .map(|g| cfg.series_tol * g.l1_sum().max(f64::MIN_POSITIVE))
            .collect();
        let mut composed = compose_all(&sources, u, cfg.order_cap, &tols)?;
        let dfu = composed.split_off(1);
        let fu = composed.pop().expect("f composed");
        let omega = FourierField::constant(&p.omega, f.trunc_radius());
        let rhs = omega.add(&fu);
        let mut w = neumann_inverse_apply(
            u,
            &rhs,
            cfg.series_tol * rhs.l1_sum(),
            cfg.neumann_max_terms,
        )?;
        if f.is_real() && u.is_real() {
            w.symmetrize();
        }
        Ok(Self {
            u: u.clone(),
            dfu,
            w,
            p,
            cfg,
        })
    }

    fn f_value(&self) -> FourierField {
        project(&self.w, self.p, Part::Minus)
    }

    /// `DF(u) h = I⁻ (I + Du)⁻¹ [ (Df∘U) h − Dh w ]`.
    fn df(&self, h: &FourierField) -> Result<FourierField, ElimError> {
        let mut a = h.zeros_like().with_real(h.is_real());
        for (j, dj) in self.dfu.iter().enumerate() {
            a.add_assign(&dj.mul_scalar(&h.component(j)));
        }
        let rhs = a.sub(&h.jacobian_apply(&self.w));
        let out = neumann_inverse_apply(
            &self.u,
            &rhs,
            self.cfg.series_tol * rhs.l1_sum(),
            self.cfg.neumann_max_terms,
        )?;
        Ok(project(&out, self.p, Part::Minus))
    }
}

/// `F(u) = I⁻ (I + Du)⁻¹ [ω + f∘(id + u)]`.
pub fn f_operator(
    u: &FourierField,
    f: &FourierField,
    p: &ResonanceParams,
    cfg: &EliminationConfig,
) -> Result<FourierField, ElimError> {
    Ok(Linearization::new(u, f, p, cfg)?.f_value())
}

/// `DF(u) h`.
pub fn df_apply(
    u: &FourierField,
    f: &FourierField,
    h: &FourierField,
    p: &ResonanceParams,
    cfg: &EliminationConfig,
) -> Result<FourierField, ElimError> {
    Linearization::new(u, f, p, cfg)?.df(h)
}

/// Solves `DF(u) h = g` on `I⁻` with the configured strategy.
fn solve_df(
    lin: &Linearization,
    space: &MinusSpace,
    g: &FourierField,
) -> Result<FourierField, ElimError> {
    let b = space.flatten(g);
    let failure: RefCell<Option<ElimError>> = RefCell::new(None);
    let apply = |y: &[Complex64]| -> Vec<Complex64> {
        let h = space.unflatten(&space.precondition(y));
        match lin.df(&h) {
            Ok(r) => space.flatten(&r),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![Complex64::new(0.0, 0.0); y.len()]
            }
        }
    };
    let y = match lin.cfg.linsolve {
        LinearSolver::Direct => {
            let out = gmres::gmres(
                apply,
                &b,
                lin.cfg.krylov_restart,
                lin.cfg.krylov_max_iter,
                lin.cfg.krylov_tol,
            );
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            if !out.converged && out.residual > 1e3 * lin.cfg.krylov_tol {
                return Err(ElimError::SolverDiverged(format!(
                    "GMRES stalled at relative residual {:.3e} after {} iterations",
                    out.residual, out.iterations
                )));
            }
            out.x
        }
        LinearSolver::Neumann => {
            let y = preconditioned_series(&apply, &b, lin.cfg)?;
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            y
        }
    };
    let mut h = space.unflatten(&space.precondition(&y));
    if g.is_real() && lin.u.is_real() {
        h.symmetrize();
    }
    Ok(h)
}

/// `y = Σ_n (I − A)^n b`, stopping when a term drops below `series_tol·‖b‖`.
fn preconditioned_series<F>(
    apply: &F,
    b: &[Complex64],
    cfg: &EliminationConfig,
) -> Result<Vec<Complex64>, ElimError>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let l1 = |v: &[Complex64]| v.iter().map(|z| z.norm()).sum::<f64>();
    let bn = l1(b);
    let mut y = b.to_vec();
    let mut term = b.to_vec();
    let mut prev = bn;
    let mut rising = 0;
    for n in 1..=cfg.neumann_max_terms {
        let at = apply(&term);
        term = term.iter().zip(&at).map(|(t, a)| t - a).collect();
        let tn = l1(&term);
        for (yi, ti) in y.iter_mut().zip(&term) {
            *yi += ti;
        }
        if tn <= cfg.series_tol.max(1e-17) * bn {
            return Ok(y);
        }
        if tn >= prev {
            rising += 1;
            if rising >= 5 {
                return Err(ElimError::SolverDiverged(format!(
                    "Neumann series terms stopped decreasing after {n} terms (term norm {tn:.3e})"
                )));
            }
        } else {
            rising = 0;
        }
        prev = tn;
    }
    Err(ElimError::SolverDiverged(format!(
        "Neumann series not converged in {} terms",
        cfg.neumann_max_terms
    )))
}

/// `h` with `DF(0) h = g`, where `DF(0) h = I⁻(f̂h − Dh·ω)` and `f̂h = Df·h − Dh·f`.
///
/// `Neumann` sums `−(D·ω)⁻¹ Σ_n (I⁻ f̂ (D·ω)⁻¹)^n g`; `Direct` assembles the
/// truncated matrix and solves it by LU.
pub fn df0_solve(
    g: &FourierField,
    f: &FourierField,
    p: &ResonanceParams,
    cfg: &EliminationConfig,
) -> Result<FourierField, ElimError> {
    for q in g.support() {
        let k = g.window().mode(q);
        if p.is_resonant(k) {
            return Err(ElimError::ResonantInput(g.window().multi_index(q)));
        }
    }
    let zero = f.zeros_like();
    let lin = Linearization::new(&zero, f, p, cfg)?;
    let space = MinusSpace::new(f.window(), p);
    match cfg.linsolve {
        LinearSolver::Neumann => solve_df(&lin, &space, g),
        LinearSolver::Direct => {
            let n = space.len();
            let mut a = DMatrix::<Complex64>::zeros(n, n);
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            for col in 0..n {
                e[col] = Complex64::new(1.0, 0.0);
                let column = space.flatten(&lin.df(&space.unflatten(&e))?);
                e[col] = Complex64::new(0.0, 0.0);
                for (row, v) in column.into_iter().enumerate() {
                    a[(row, col)] = v;
                }
            }
            let rhs = DVector::from_vec(space.flatten(g));
            let x = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| ElimError::SolverDiverged("DF(0) matrix is singular".into()))?;
            let mut h = space.unflatten(x.as_slice());
            if g.is_real() && f.is_real() {
                h.symmetrize();
            }
            Ok(h)
        }
    }
}

/// The radius `ε̂` of the ball on which the elimination theorem applies.
pub fn theorem_radius(p: &ResonanceParams, rho: f64, rho_prime: f64) -> f64 {
    let s6 = 6f64.sqrt();
    let omega_norm: f64 = p.omega.iter().map(|w| w.abs()).sum();
    (s6 - 2.0) / 12.0
        * p.sigma
        * ((rho - rho_prime) / (4.0 * PI)).min((3.0 - s6) / 6.0 * p.sigma / omega_norm)
}

/// Finds `u` on `I⁻` with `I⁻ U(X) = 0` and returns `U(X) = (I + Du)⁻¹ X∘(id + u)`.
pub fn eliminate(
    x: &FourierField,
    p: &ResonanceParams,
    cfg: &EliminationConfig,
) -> Result<EliminationResult, ElimError> {
    let k = x.trunc_radius();
    let omega = FourierField::constant(&p.omega, k);
    let f = x.sub(&omega).with_real(x.is_real());
    let eps_hat = theorem_radius(p, cfg.rho, cfg.rho_prime);
    let inside = f.norm(NormKind::Plain(cfg.rho)) < eps_hat;
    let norm = |g: &FourierField| g.norm(NormKind::Plain(cfg.rho_prime));

    let f0 = project(x, p, Part::Minus);
    if f0.is_zero() {
        return Ok(EliminationResult {
            u: x.zeros_like().with_real(x.is_real()),
            transformed: x.clone(),
            residual: 0.0,
            residual_rho: 0.0,
            theorem_radius: eps_hat,
            inside_theorem_ball: inside,
            history: vec![],
            tracking_ok: true,
            newton_steps: 0,
        });
    }
    let f0_norm = norm(&f0);
    let space = MinusSpace::new(x.window(), p);
    let support_limit = cfg.max_support_growth * x.mode_count().max(1) as f64;
    let guard = |g: &FourierField| -> Result<(), ElimError> {
        let m = g.mode_count();
        if m as f64 > support_limit {
            return Err(ElimError::SupportGrowth {
                modes: m,
                limit: support_limit,
            });
        }
        Ok(())
    };
    let real = x.is_real();
    let finish = |mut v: FourierField| {
        v = project(&v, p, Part::Minus);
        if real {
            v.symmetrize();
        }
        v
    };

    // du/dλ = −DF(u)⁻¹ F(0)
    let velocity = |lin: &Linearization| -> Result<FourierField, ElimError> {
        Ok(solve_df(lin, &space, &f0)?.scale(-1.0))
    };

    let steps = cfg.lambda_steps.max(1);
    let dl = 1.0 / steps as f64;
    let mut u = x.zeros_like().with_real(real);
    let mut lin = Linearization::new(&u, &f, p, cfg)?;
    let mut history = vec![HomotopyPoint {
        lambda: 0.0,
        residual: f0_norm,
        expected: f0_norm,
    }];
    for s in 0..steps {
        let k1 = velocity(&lin)?;
        let l2 = Linearization::new(&finish(u.axpy(0.5 * dl, &k1)), &f, p, cfg)?;
        let k2 = velocity(&l2)?;
        let l3 = Linearization::new(&finish(u.axpy(0.5 * dl, &k2)), &f, p, cfg)?;
        let k3 = velocity(&l3)?;
        let l4 = Linearization::new(&finish(u.axpy(dl, &k3)), &f, p, cfg)?;
        let k4 = velocity(&l4)?;
        let incr = k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4);
        u = finish(u.axpy(dl / 6.0, &incr));
        guard(&u)?;
        lin = Linearization::new(&u, &f, p, cfg)?;
        guard(&lin.w)?;
        let lambda = (s + 1) as f64 * dl;
        history.push(HomotopyPoint {
            lambda,
            residual: norm(&lin.f_value()),
            expected: (1.0 - lambda) * f0_norm,
        });
    }
    let tracking_ok = history
        .iter()
        .filter(|h| h.lambda < 1.0)
        .all(|h| (h.residual - h.expected).abs() <= 0.1 * h.expected);
    if !tracking_ok {
        log::warn!("homotopy residual left the 10% band around (1 - lambda)|F(0)|");
    }

    let mut newton_steps = 0;
    let mut residual = norm(&lin.f_value());
    while newton_steps < cfg.newton_polish + cfg.max_extra_newton {
        if newton_steps >= cfg.newton_polish && residual <= cfg.residual_tol {
            break;
        }
        let fv = lin.f_value();
        if fv.is_zero() {
            break;
        }
        let du = solve_df(&lin, &space, &fv)?;
        u = finish(u.sub(&du));
        guard(&u)?;
        lin = Linearization::new(&u, &f, p, cfg)?;
        residual = norm(&lin.f_value());
        newton_steps += 1;
    }
    if residual > cfg.residual_tol {
        return Err(ElimError::SolverDiverged(format!(
            "elimination residual {residual:.3e} above tolerance {:.1e} after {newton_steps} Newton steps",
            cfg.residual_tol
        )));
    }
    let minus = lin.f_value();
    let residual_rho = minus.norm(NormKind::Plain(cfg.rho));
    let mut transformed = lin.w;
    transformed.set_real(real);
    Ok(EliminationResult {
        u,
        transformed,
        residual,
        residual_rho,
        theorem_radius: eps_hat,
        inside_theorem_ball: inside,
        history,
        tracking_ok,
        newton_steps,
    })
}
