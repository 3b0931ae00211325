//! The truncated linearisation `DR(ω) f = Lf − [ω̄·E(Lf)] ω` with
//! `Lf = λ₁ T(I⁺ f)`, its spectrum, the stable/unstable splitting, and a
//! shooting method for points on the stable manifold.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{complex_eigvec, KTBasis};
use crate::fourier::{FourierField, MultiIndex, NormKind, Window};
use crate::linalg;
use crate::renorm::{renorm_step, OverflowPolicy, RenormConfig, RenormError};
use crate::resonance::ResonanceParams;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("mode {k} maps to {image}, outside the window of radius {radius}")]
    WindowOverflow {
        k: MultiIndex,
        image: MultiIndex,
        radius: u32,
    },
    #[error("shooting failed after {iterations} iterations (unstable residual {residual:.3e}, target {target:.3e})")]
    ShootingFailed {
        iterations: usize,
        residual: f64,
        target: f64,
    },
    #[error("shooting needs a real-flagged seed of dimension {0}")]
    BadSeed(usize),
    #[error(transparent)]
    Renorm(#[from] RenormError),
}

type Column = Vec<(usize, Complex64)>;

/// `DR(ω)` on the flattened space of `(k, i)` pairs, `‖k‖ ≤ K`, stored by column.
///
/// Index `q·d + i` is component `i` of window position `q`.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub basis: KTBasis,
    pub params: ResonanceParams,
    pub window: Arc<Window>,
    columns: Vec<Column>,
    /// Resonant columns whose image left the window and were zeroed.
    pub overflow_columns: usize,
}

pub fn build_dr_matrix(
    b: &KTBasis,
    p: &ResonanceParams,
    radius: u32,
    policy: OverflowPolicy,
) -> Result<LinearizedOperator, SpectralError> {
    let d = b.d;
    let w = Window::get(d, radius);
    let l1 = b.lambda1();
    let lt = b.t_inv_real();
    // Column j of λ₁T⁻¹, and ω̄·(that column).
    let block: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| l1 * lt[i][j]).collect())
        .collect();
    let zero = w.zero_position();
    let mut columns = vec![Vec::new(); w.len() * d];
    let mut overflow = 0;
    for q in w.positions() {
        let k = w.mode(q);
        if !p.is_resonant(k) {
            continue;
        }
        let k64: Vec<i64> = k.iter().map(|&v| v as i64).collect();
        let img: Vec<i32> = linalg::transpose_apply_i64(&b.t, &k64)
            .into_iter()
            .map(|v| i32::try_from(v).unwrap_or(i32::MAX))
            .collect();
        let Some(t) = w.position(&img) else {
            match policy {
                OverflowPolicy::Error => {
                    return Err(SpectralError::WindowOverflow {
                        k: w.multi_index(q),
                        image: MultiIndex(img),
                        radius,
                    })
                }
                OverflowPolicy::Drop => {
                    overflow += d;
                    continue;
                }
            }
        };
        for (j, col) in block.iter().enumerate() {
            let mut v = col.clone();
            if q == zero {
                let s: f64 = b.omega_bar.iter().zip(col).map(|(a, c)| a * c).sum();
                for (vi, wi) in v.iter_mut().zip(&b.omega) {
                    *vi -= s * wi;
                }
            }
            columns[q * d + j] = v
                .into_iter()
                .enumerate()
                .filter(|(_, x)| *x != 0.0)
                .map(|(i, x)| (t * d + i, Complex64::new(x, 0.0)))
                .collect();
        }
    }
    Ok(LinearizedOperator {
        basis: b.clone(),
        params: p.clone(),
        window: w,
        columns,
        overflow_columns: overflow,
    })
}

impl LinearizedOperator {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, idx: usize) -> &[(usize, Complex64)] {
        &self.columns[idx]
    }

    pub fn index_of(&self, k: &MultiIndex, comp: usize) -> Option<usize> {
        self.window
            .position(k.as_slice())
            .map(|q| q * self.basis.d + comp)
    }

    pub fn dense(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// The `d×d` block acting on constant fields.
    pub fn k0_block(&self) -> DMatrix<f64> {
        let d = self.basis.d;
        let z = self.window.zero_position();
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for &(i, v) in &self.columns[z * d + j] {
                m[(i - z * d, j)] = v.re;
            }
        }
        m
    }

    fn apply_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        for (j, &xj) in x.iter().enumerate() {
            if xj == Complex64::new(0.0, 0.0) {
                continue;
            }
            for &(i, v) in &self.columns[j] {
                y[i] += v * xj;
            }
        }
        y
    }

    /// Matrix action on a field of matching window.
    pub fn apply(&self, f: &FourierField) -> FourierField {
        assert!(Arc::ptr_eq(f.window(), &self.window));
        let d = self.basis.d;
        let mut x = Vec::with_capacity(self.dim());
        for q in self.window.positions() {
            x.extend_from_slice(f.coeff_at(q));
        }
        let y = self.apply_vec(&x);
        let mut out = f.zeros_like();
        for q in self.window.positions() {
            out.coeff_at_mut(q).copy_from_slice(&y[q * d..(q + 1) * d]);
        }
        out
    }

    fn weight(&self, idx: usize, rho: f64) -> f64 {
        let n = self.window.l1(idx / self.basis.d) as f64;
        (1.0 + 2.0 * PI * n) * (rho * n).exp()
    }

    /// Operator norm induced by `‖·‖'_ρ` of a column-stored matrix.
    fn induced_norm(&self, cols: &[Column], rho: f64) -> f64 {
        cols.iter()
            .enumerate()
            .map(|(j, col)| {
                // Folding from +0.0: an empty `sum` is −0.0.
                let s = col
                    .iter()
                    .map(|&(i, v)| v.norm() * self.weight(i, rho))
                    .fold(0.0, |a, x| a + x);
                s / self.weight(j, rho)
            })
            .fold(0.0, f64::max)
    }

    /// Operator norm of `DR(ω)` induced by `‖·‖'_ρ`.
    pub fn operator_norm(&self, rho: f64) -> f64 {
        self.induced_norm(&self.columns, rho)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NilpotencyReport {
    /// Smallest `n` with `((I − E)L)ⁿ = 0`; `None` if a cycle prevents it.
    pub nilpotency_index: Option<usize>,
    /// `‖((I − E)L)ⁿ‖` at `n` equal to the index, computed by sparse products.
    pub max_residual: f64,
    /// `‖Lⁿ(I − E)‖'_ρ` for `n = 1, 2, …` up to and including the first zero.
    pub norm_sequence: Vec<f64>,
    /// `2 + ⌊log(σK/m)/log|λ₁|⌋` with `m` the least `|ω·k|` over resonant `k ≠ 0`.
    pub bound: Option<usize>,
}

impl NilpotencyReport {
    /// Successive ratios of [`Self::norm_sequence`].
    pub fn ratios(&self) -> Vec<f64> {
        self.norm_sequence.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Support-chasing nilpotency check for the non-constant block.
pub fn nilpotency_check(op: &LinearizedOperator, rho: f64) -> NilpotencyReport {
    let d = op.basis.d;
    let w = &op.window;
    let zero = w.zero_position();
    // Successor of each nonconstant position under (I − E)L.
    let succ: Vec<Option<usize>> = w
        .positions()
        .map(|q| {
            if q == zero {
                return None;
            }
            op.columns[q * d]
                .iter()
                .chain(op.columns[q * d + d - 1].iter())
                .map(|&(i, _)| i / d)
                .find(|&t| t != zero)
        })
        .collect();
    // Chain length by memoised walk; a revisit within one walk means a cycle.
    let mut len: Vec<Option<usize>> = vec![None; w.len()];
    let mut cyclic = false;
    for start in w.positions() {
        let mut path = Vec::new();
        let mut cur = start;
        let mut on_path = HashMap::new();
        let base = loop {
            if let Some(l) = len[cur] {
                break l;
            }
            if on_path.insert(cur, ()).is_some() {
                cyclic = true;
                break 0;
            }
            path.push(cur);
            match succ[cur] {
                Some(next) => cur = next,
                None => break 0,
            }
        };
        let mut l = base;
        for &q in path.iter().rev() {
            if succ[q].is_some() {
                l += 1;
            }
            len[q] = Some(l);
        }
    }
    let longest = len.iter().map(|l| l.unwrap_or(0)).max().unwrap_or(0);
    let index = (!cyclic).then_some(longest + 1);

    // Norms of Lⁿ(I − E) by repeated sparse application to every nonconstant column.
    let mut cols: Vec<Column> = (0..op.dim())
        .map(|j| {
            if j / d == zero {
                Vec::new()
            } else {
                op.columns[j].clone()
            }
        })
        .collect();
    let mut norm_sequence = Vec::new();
    let cap = index.unwrap_or(4 * w.len()).max(1) + 1;
    let mut residual = 0.0;
    for n in 1..=cap {
        let nrm = op.induced_norm(&cols, rho);
        norm_sequence.push(nrm);
        if Some(n) == index {
            residual = nrm;
        }
        if nrm == 0.0 {
            break;
        }
        cols = cols
            .iter()
            .map(|col| {
                let mut acc: HashMap<usize, Complex64> = HashMap::new();
                for &(i, v) in col {
                    for &(r, m) in &op.columns[i] {
                        *acc.entry(r).or_default() += m * v;
                    }
                }
                let mut c: Column = acc.into_iter().filter(|(_, v)| v.norm() != 0.0).collect();
                c.sort_by_key(|e| e.0);
                c
            })
            .collect();
    }

    let min_div = w
        .positions()
        .filter(|&q| q != zero && op.params.is_resonant(w.mode(q)))
        .map(|q| crate::fourier::dot_i32(w.mode(q), &op.basis.omega).abs())
        .fold(f64::INFINITY, f64::min);
    let bound = min_div.is_finite().then(|| {
        let r =
            (op.params.sigma * w.radius() as f64 / min_div).ln() / op.basis.lambda1().abs().ln();
        2 + r.max(0.0).floor() as usize
    });
    NilpotencyReport {
        nilpotency_index: index,
        max_residual: residual,
        norm_sequence,
        bound,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    /// All eigenvalues, by decreasing modulus.
    pub eigenvalues: Vec<Complex64>,
    /// Eigenvalues of the constant block, by decreasing modulus.
    pub k0_eigenvalues: Vec<Complex64>,
    /// Matching ℓ2-normalised eigenvectors of the constant block.
    pub k0_eigenvectors: Vec<Vec<Complex64>>,
    pub nilpotency: NilpotencyReport,
}

impl Spectrum {
    pub fn unstable(&self) -> Vec<Complex64> {
        self.eigenvalues
            .iter()
            .copied()
            .filter(|z| z.norm() > 1.0)
            .collect()
    }
}

/// Constant-block eigenvalues plus exact zeros from the nilpotent remainder.
///
/// The constant block is invariant and the remainder is block-triangular
/// against it, so the spectrum splits. A non-nilpotent remainder falls back
/// to a dense eigensolve of its resonant part.
pub fn eigen_spectrum(op: &LinearizedOperator, rho: f64) -> Spectrum {
    let d = op.basis.d;
    let k0 = op.k0_block();
    let mut k0_eigenvalues: Vec<Complex64> =
        k0.clone().complex_eigenvalues().iter().copied().collect();
    k0_eigenvalues.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    let k0_eigenvectors = k0_eigenvalues
        .iter()
        .map(|&l| complex_eigvec(&k0, l))
        .collect();
    let nilpotency = nilpotency_check(op, rho);
    let mut eigenvalues = k0_eigenvalues.clone();
    if nilpotency.nilpotency_index.is_some() {
        eigenvalues.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), op.dim() - d));
    } else {
        log::warn!("non-constant block is not nilpotent; using a dense eigensolve");
        let zero = op.window.zero_position();
        let idx: Vec<usize> = (0..op.dim())
            .filter(|&j| j / d != zero && !op.columns[j].is_empty())
            .collect();
        let pos: HashMap<usize, usize> = idx.iter().enumerate().map(|(a, &j)| (j, a)).collect();
        let mut m = DMatrix::<Complex64>::zeros(idx.len(), idx.len());
        for (a, &j) in idx.iter().enumerate() {
            for &(i, v) in &op.columns[j] {
                if let Some(&r) = pos.get(&i) {
                    m[(r, a)] = v;
                }
            }
        }
        if let Some(ev) = m.schur().eigenvalues() {
            eigenvalues.extend(ev.iter().copied());
        }
        eigenvalues.extend(std::iter::repeat_n(
            Complex64::new(0.0, 0.0),
            op.dim() - d - idx.len(),
        ));
    }
    eigenvalues.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    Spectrum {
        eigenvalues,
        k0_eigenvalues,
        k0_eigenvectors,
        nilpotency,
    }
}

/// `P_ω E f = (ω̄·E f) ω` as a constant field.
pub fn neutral_projection(f: &FourierField, b: &KTBasis) -> FourierField {
    let s = b.omega_bar_dot(&f.mean());
    let v: Vec<Complex64> = b.omega.iter().map(|&w| s * w).collect();
    let mut out = FourierField::constant_complex(&v, f.trunc_radius());
    out.set_real(f.is_real() && s.im == 0.0);
    out
}

/// `(P^s f, P^u f)` with `P^u = (I − P_ω)E`, `P_ω v = (ω̄·v)ω`, `P^s = I − P^u`.
pub fn project_stable_unstable(f: &FourierField, b: &KTBasis) -> (FourierField, FourierField) {
    let unstable = f.constant_part().sub(&neutral_projection(f, b));
    let stable = f.sub(&unstable);
    (stable, unstable)
}

/// Orthonormal real basis (columns) of the range of `I − ω ω̄ᵀ`.
pub fn unstable_frame(b: &KTBasis) -> DMatrix<f64> {
    let d = b.d;
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..d {
        let mut v = DVector::from_fn(d, |i, _| {
            f64::from(u8::from(i == j)) - b.omega[i] * b.omega_bar[j]
        });
        for c in &cols {
            let proj = c.dot(&v);
            v -= c * proj;
        }
        let n = v.norm();
        if n > 1e-8 && cols.len() < d - 1 {
            cols.push(v / n);
        }
    }
    DMatrix::from_columns(&cols)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShootResult {
    pub field: FourierField,
    pub iterations: usize,
    /// `‖P^u(R^n(X) − ω)‖` at the returned field.
    pub residual: f64,
    pub target: f64,
    /// The constant adjustment added to `ω + f_seed`.
    pub adjustment: Vec<f64>,
}

/// Adjusts the unstable constant coordinates of `ω + f_seed` so that
/// `n_targets` renormalisation steps land on the stable side.
///
/// Broyden iteration on the `(d − 1)` coordinates, starting from the linear
/// prediction `(DR restricted to P^u)ⁿ`.
pub fn shoot_stable(
    f_seed: &FourierField,
    cfg: &RenormConfig,
    n_targets: usize,
) -> Result<ShootResult, SpectralError> {
    let b = &cfg.basis;
    let d = b.d;
    if f_seed.dim() != d || !f_seed.is_real() {
        return Err(SpectralError::BadSeed(d));
    }
    let frame = unstable_frame(b);
    let m = d - 1;
    let seed_norm = f_seed.norm(NormKind::Prime(cfg.rho()));
    // Rounding in ω alone leaves residuals near 1e-16, so the target never drops below this.
    let floor = 1e-15;
    let target = (1e-9 * seed_norm).max(floor);
    let base = cfg.omega_field().add(f_seed).with_real(true);

    let evaluate = |c: &DVector<f64>| -> Result<DVector<f64>, SpectralError> {
        let shift = &frame * c;
        let x = base.add(&FourierField::constant(shift.as_slice(), cfg.k));
        let mut cur = x;
        for _ in 0..n_targets {
            cur = renorm_step(&cur, cfg)?.field;
        }
        let (_, un) = project_stable_unstable(&cur, b);
        let v = DVector::from_iterator(d, un.mean().iter().map(|z| z.re));
        Ok(frame.transpose() * v)
    };
    let residual_of = |g: &DVector<f64>| (&frame * g).iter().map(|x| x.abs()).sum::<f64>();

    // Linear prediction on constants: M = (I − ωω̄ᵀ) λ₁T⁻¹ restricted to the frame.
    let lt = b.t_inv_real();
    let l1 = b.lambda1();
    let full = DMatrix::from_fn(d, d, |i, j| {
        let s: f64 = (0..d).map(|r| b.omega_bar[r] * l1 * lt[r][j]).sum();
        l1 * lt[i][j] - b.omega[i] * s
    });
    let reduced = frame.transpose() * &full * &frame;
    let mut jac = DMatrix::<f64>::identity(m, m);
    for _ in 0..n_targets {
        jac = &reduced * jac;
    }

    let mut c = DVector::<f64>::zeros(m);
    let mut g = evaluate(&c)?;
    let mut res = residual_of(&g);
    let mut best = (c.clone(), res);
    let done = |c: &DVector<f64>, res: f64, iterations: usize| {
        let shift = &frame * c;
        ShootResult {
            field: base.add(&FourierField::constant(shift.as_slice(), cfg.k)),
            iterations,
            residual: res,
            target,
            adjustment: shift.iter().copied().collect(),
        }
    };
    // Once below target, keep refining while each step at least halves the
    // residual, so that later iterates start closer to the stable manifold.
    let max_iter = 50;
    for it in 0..max_iter {
        if res <= floor {
            return Ok(done(&c, res, it));
        }
        let Some(step) = jac.clone().lu().solve(&(-&g)) else {
            break;
        };
        let c_new = &c + &step;
        let g_new = evaluate(&c_new)?;
        let res_new = residual_of(&g_new);
        if best.1 <= target && res_new > 0.5 * best.1 {
            return Ok(done(&best.0, best.1, it + 1));
        }
        let dg = &g_new - &g;
        let denom = step.dot(&step);
        if denom > 0.0 {
            jac += (dg - &jac * &step) * step.transpose() / denom;
        }
        c = c_new;
        g = g_new;
        res = res_new;
        if res < best.1 {
            best = (c.clone(), res);
        }
    }
    if best.1 <= target {
        return Ok(done(&best.0, best.1, max_iter));
    }
    Err(SpectralError::ShootingFailed {
        iterations: max_iter,
        residual: best.1,
        target,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FdReport {
    pub step: f64,
    pub directions: usize,
    /// `max ‖FD − DR e‖'_ρ / max(‖DR e‖'_ρ, ‖e‖'_ρ)` over the directions.
    pub max_relative_error: f64,
}

/// Compares the assembled matrix with `(R(ω + t e) − ω)/t` on random unit-mode directions.
pub fn fd_validation(
    op: &LinearizedOperator,
    cfg: &RenormConfig,
    n_dirs: usize,
    t: f64,
    seed: u64,
) -> Result<FdReport, SpectralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = &op.window;
    let omega = cfg.omega_field();
    let nk = NormKind::Prime(cfg.rho());
    let mut worst: f64 = 0.0;
    for n in 0..n_dirs {
        // Half the directions are constant, half a Hermitian mode pair.
        let q = if n % 2 == 0 {
            w.zero_position()
        } else {
            rng.gen_range(0..w.len())
        };
        let comp = rng.gen_range(0..cfg.basis.d);
        let mut e = omega.zeros_like();
        let mut v = vec![Complex64::new(0.0, 0.0); cfg.basis.d];
        v[comp] = Complex64::new(1.0, 0.0);
        e.coeff_at_mut(q).copy_from_slice(&v);
        let nq = w.negation(q);
        if nq != q {
            e.coeff_at_mut(nq).copy_from_slice(&v);
        }
        let e = e.with_real(true);
        let step = renorm_step(&omega.axpy(t, &e), cfg)?;
        let fd = step.field.sub(&omega).scale(1.0 / t);
        let exact = op.apply(&e);
        let err = fd.sub(&exact).norm(nk) / exact.norm(nk).max(e.norm(nk));
        worst = worst.max(err);
    }
    Ok(FdReport {
        step: t,
        directions: n_dirs,
        max_relative_error: worst,
    })
}
