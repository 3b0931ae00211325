use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use super::window::{dot_i32, MultiIndex, Window};
use super::{FourierError, NormKind, DEFAULT_DROP_TOL};

const TWO_PI: f64 = 2.0 * PI;

/// A truncated Fourier series `Σ_k f_k e^{2πik·θ}` on the d-torus with
/// `C^m`-valued coefficients, stored densely over an ℓ1 window.
///
/// Public constructors always build vector fields (`m = d`). Scalar
/// series (`m = 1`) are used internally for products and composition.
#[derive(Clone, Debug)]
pub struct FourierField {
    window: Arc<Window>,
    ncomp: usize,
    real: bool,
    data: Vec<Complex64>,
}

impl PartialEq for FourierField {
    fn eq(&self, other: &Self) -> bool {
        self.window.dim() == other.window.dim()
            && self.window.radius() == other.window.radius()
            && self.ncomp == other.ncomp
            && self.data == other.data
    }
}

impl FourierField {
    /// The zero vector field on `T^dim` with truncation radius `radius`.
    pub fn zeros(dim: usize, radius: u32) -> Self {
        Self::with_components(Window::get(dim, radius), dim, true)
    }

    pub(crate) fn with_components(window: Arc<Window>, ncomp: usize, real: bool) -> Self {
        let data = vec![Complex64::new(0.0, 0.0); window.len() * ncomp];
        Self {
            window,
            ncomp,
            real,
            data,
        }
    }

    pub(crate) fn scalar_zeros(window: &Arc<Window>, real: bool) -> Self {
        Self::with_components(window.clone(), 1, real)
    }

    /// Zero field sharing this field's window and component count.
    pub fn zeros_like(&self) -> Self {
        Self::with_components(self.window.clone(), self.ncomp, self.real)
    }

    /// A constant real vector field.
    pub fn constant(value: &[f64], radius: u32) -> Self {
        let mut f = Self::zeros(value.len(), radius);
        let z = f.window.zero_position();
        for (c, &v) in f.data[z * value.len()..].iter_mut().zip(value) {
            *c = Complex64::new(v, 0.0);
        }
        f
    }

    /// A constant complex vector field. Not flagged real.
    pub fn constant_complex(value: &[Complex64], radius: u32) -> Self {
        let mut f = Self::zeros(value.len(), radius);
        f.real = false;
        let z = f.window.zero_position();
        f.data[z * value.len()..(z + 1) * value.len()].copy_from_slice(value);
        f
    }

    /// Builds a field from explicit modes; repeated indices accumulate.
    pub fn from_modes<I>(
        dim: usize,
        radius: u32,
        real: bool,
        modes: I,
    ) -> Result<Self, FourierError>
    where
        I: IntoIterator<Item = (MultiIndex, Vec<Complex64>)>,
    {
        let mut f = Self::zeros(dim, radius);
        f.real = real;
        for (k, v) in modes {
            if v.len() != dim {
                return Err(FourierError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let p = f.position_of(&k)?;
            for (c, x) in f.coeff_at_mut(p).iter_mut().zip(v) {
                *c += x;
            }
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn trunc_radius(&self) -> u32 {
        self.window.radius()
    }

    pub fn window(&self) -> &Arc<Window> {
        &self.window
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn set_real(&mut self, real: bool) {
        self.real = real;
    }

    pub fn with_real(mut self, real: bool) -> Self {
        self.real = real;
        self
    }

    fn position_of(&self, k: &MultiIndex) -> Result<usize, FourierError> {
        if k.dim() != self.dim() {
            return Err(FourierError::DimensionMismatch {
                expected: self.dim(),
                found: k.dim(),
            });
        }
        self.window
            .position(k.as_slice())
            .ok_or_else(|| FourierError::ModeOutOfWindow {
                k: k.clone(),
                radius: self.trunc_radius(),
            })
    }

    pub fn coeff_at(&self, pos: usize) -> &[Complex64] {
        &self.data[pos * self.ncomp..(pos + 1) * self.ncomp]
    }

    pub fn coeff_at_mut(&mut self, pos: usize) -> &mut [Complex64] {
        &mut self.data[pos * self.ncomp..(pos + 1) * self.ncomp]
    }

    /// Coefficient at `k`; the zero vector when `k` is absent or outside the window.
    pub fn coeff(&self, k: &MultiIndex) -> Vec<Complex64> {
        match self.window.position(k.as_slice()) {
            Some(p) => self.coeff_at(p).to_vec(),
            None => vec![Complex64::new(0.0, 0.0); self.ncomp],
        }
    }

    pub fn set_coeff(&mut self, k: &MultiIndex, value: &[Complex64]) -> Result<(), FourierError> {
        if value.len() != self.ncomp {
            return Err(FourierError::DimensionMismatch {
                expected: self.ncomp,
                found: value.len(),
            });
        }
        let p = self.position_of(k)?;
        self.coeff_at_mut(p).copy_from_slice(value);
        Ok(())
    }

    fn is_zero_at(&self, pos: usize) -> bool {
        self.coeff_at(pos)
            .iter()
            .all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Window positions carrying a nonzero coefficient.
    pub fn support(&self) -> Vec<usize> {
        (0..self.window.len())
            .filter(|&p| !self.is_zero_at(p))
            .collect()
    }

    /// Number of stored (nonzero) modes.
    pub fn mode_count(&self) -> usize {
        (0..self.window.len())
            .filter(|&p| !self.is_zero_at(p))
            .count()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Nonzero modes in window order.
    pub fn iter(&self) -> impl Iterator<Item = (MultiIndex, &[Complex64])> + '_ {
        (0..self.window.len())
            .filter(move |&p| !self.is_zero_at(p))
            .map(move |p| (self.window.multi_index(p), self.coeff_at(p)))
    }

    /// ‖f‖_r or ‖f‖'_r with ℓ1 coefficient norms.
    pub fn norm(&self, kind: NormKind) -> f64 {
        let (r, prime) = match kind {
            NormKind::Plain(r) => (r, false),
            NormKind::Prime(r) => (r, true),
        };
        let mut total = 0.0;
        for p in 0..self.window.len() {
            let c = coeff_l1(self.coeff_at(p));
            if c == 0.0 {
                continue;
            }
            let n = self.window.l1(p) as f64;
            let mut w = (r * n).exp();
            if prime {
                w *= 1.0 + TWO_PI * n;
            }
            total += c * w;
        }
        total
    }

    /// Σ_k ‖f_k‖₁, i.e. the plain norm at radius zero (a sup-norm bound).
    pub fn l1_sum(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).sum()
    }

    /// Average over the torus: the `k = 0` coefficient.
    pub fn mean(&self) -> Vec<Complex64> {
        self.coeff_at(self.window.zero_position()).to_vec()
    }

    /// The field with its mean removed, `(I − E) f`.
    pub fn nonconstant(&self) -> Self {
        let mut g = self.clone();
        let z = self.window.zero_position();
        for c in g.coeff_at_mut(z) {
            *c = Complex64::new(0.0, 0.0);
        }
        g
    }

    /// The constant part `E f` as a field.
    pub fn constant_part(&self) -> Self {
        let mut g = self.zeros_like();
        let z = self.window.zero_position();
        g.coeff_at_mut(z).copy_from_slice(self.coeff_at(z));
        g
    }

    fn assert_compatible(&self, other: &Self) {
        assert!(
            Arc::ptr_eq(&self.window, &other.window),
            "field windows differ: {:?} vs {:?}",
            self.window,
            other.window
        );
    }

    pub fn add(&self, other: &Self) -> Self {
        self.assert_compatible(other);
        assert_eq!(self.ncomp, other.ncomp);
        let mut g = self.clone();
        g.add_assign(other);
        g
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.assert_compatible(other);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        self.real &= other.real;
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        self.assert_compatible(other);
        let mut g = self.clone();
        for (a, b) in g.data.iter_mut().zip(&other.data) {
            *a += b * alpha;
        }
        g.real &= other.real;
        g
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut g = self.clone();
        for c in &mut g.data {
            *c *= alpha;
        }
        g
    }

    pub fn scale_complex(&self, alpha: Complex64) -> Self {
        let mut g = self.clone();
        for c in &mut g.data {
            *c *= alpha;
        }
        g.real = self.real && alpha.im == 0.0;
        g
    }

    /// Pointwise application of a constant real matrix, `(A f)(θ) = A f(θ)`.
    pub fn apply_matrix(&self, a: &[Vec<f64>]) -> Self {
        let m = self.ncomp;
        assert_eq!(a.len(), m, "matrix row count");
        let mut g = self.zeros_like();
        for p in 0..self.window.len() {
            let c = self.coeff_at(p);
            if c.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                continue;
            }
            let out = g.coeff_at_mut(p);
            for (i, row) in a.iter().enumerate() {
                let mut s = Complex64::new(0.0, 0.0);
                for (aij, cj) in row.iter().zip(c) {
                    s += cj * aij;
                }
                out[i] = s;
            }
        }
        g
    }

    /// Partial derivative `∂_j f`: coefficients `2πi k_j f_k`.
    pub fn partial(&self, j: usize) -> Self {
        let mut g = self.clone();
        for p in 0..self.window.len() {
            let kj = self.window.mode(p)[j] as f64;
            let factor = Complex64::new(0.0, TWO_PI * kj);
            for c in g.coeff_at_mut(p) {
                *c *= factor;
            }
        }
        g
    }

    /// Directional derivative along a constant vector, `Df·ω`:
    /// coefficients `2πi (k·ω) f_k`.
    pub fn directional_derivative(&self, omega: &[f64]) -> Self {
        let mut g = self.clone();
        for p in 0..self.window.len() {
            let factor = Complex64::new(0.0, TWO_PI * dot_i32(self.window.mode(p), omega));
            for c in g.coeff_at_mut(p) {
                *c *= factor;
            }
        }
        g
    }

    /// Component `j` as a scalar series.
    pub fn component(&self, j: usize) -> Self {
        let mut s = Self::scalar_zeros(&self.window, self.real);
        for p in 0..self.window.len() {
            s.data[p] = self.data[p * self.ncomp + j];
        }
        s
    }

    /// `Df · g`: coefficients `Σ_{k1+k2=k} f_{k1} (2πi k1 · g_{k2})`.
    pub fn jacobian_apply(&self, g: &Self) -> Self {
        self.assert_compatible(g);
        assert_eq!(
            g.ncomp,
            self.dim(),
            "jacobian_apply needs a vector field argument"
        );
        let mut out = Self::with_components(self.window.clone(), self.ncomp, self.real && g.real);
        if self.is_zero() || g.is_zero() {
            return out;
        }
        // Df·g = Σ_j (∂_j f) g^j
        for j in 0..self.dim() {
            let gj = g.component(j);
            if gj.is_zero() {
                continue;
            }
            out.add_assign(&self.partial(j).mul_scalar(&gj));
        }
        out.compact(DEFAULT_DROP_TOL);
        out
    }

    /// Product of this field with a scalar series: `(f s)(θ) = f(θ) s(θ)`.
    ///
    /// Dense operands go through whole-window shifts by each mode of the
    /// sparser factor; a sparse vector factor uses the pairwise loop.
    pub fn mul_scalar(&self, s: &Self) -> Self {
        self.assert_compatible(s);
        assert_eq!(s.ncomp, 1);
        let m = self.ncomp;
        let w = &self.window;
        let mut out = Self::with_components(w.clone(), m, self.real && s.real);
        let fa = self.support();
        let sb = s.support();
        if fa.is_empty() || sb.is_empty() {
            return out;
        }
        if m == 1 && fa.len() < sb.len() {
            return s.mul_scalar(self).with_real(out.real);
        }
        if 4 * fa.len() < w.len() {
            for &pa in &fa {
                let ca = self.coeff_at(pa);
                for &pb in &sb {
                    let Some(p) = w.sum_position(pa, pb) else {
                        continue;
                    };
                    let sv = s.data[pb];
                    let dst = &mut out.data[p * m..(p + 1) * m];
                    for (o, a) in dst.iter_mut().zip(ca) {
                        *o += a * sv;
                    }
                }
            }
            return out;
        }
        for &pb in &sb {
            let sv = s.data[pb];
            w.shifted_runs(pb, |src, dst, n| {
                let from = &self.data[src * m..(src + n) * m];
                let to = &mut out.data[dst * m..(dst + n) * m];
                for (o, a) in to.iter_mut().zip(from) {
                    *o += a * sv;
                }
            });
        }
        out
    }

    /// Sets every coefficient vector with ℓ1 norm below `rel_tol · Σ‖f_k‖` to zero.
    pub fn compact(&mut self, rel_tol: f64) {
        let total = self.l1_sum();
        if total == 0.0 {
            return;
        }
        let cut = rel_tol * total;
        let m = self.ncomp;
        for p in 0..self.window.len() {
            let c = &mut self.data[p * m..(p + 1) * m];
            if coeff_l1(c) < cut {
                for z in c {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Largest `‖f_{−k} − conj(f_k)‖₁` over the window.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in 0..self.window.len() {
            let q = self.window.negation(p);
            let a = self.coeff_at(p);
            let b = self.coeff_at(q);
            let e: f64 = a.iter().zip(b).map(|(x, y)| (x.conj() - y).norm()).sum();
            worst = worst.max(e);
        }
        worst
    }

    /// Projects onto Hermitian-symmetric coefficients and sets the real flag.
    pub fn symmetrize(&mut self) {
        let m = self.ncomp;
        for p in 0..self.window.len() {
            let q = self.window.negation(p);
            if q < p {
                continue;
            }
            for i in 0..m {
                let a = self.data[p * m + i];
                let b = self.data[q * m + i];
                let avg = (a + b.conj()) * 0.5;
                self.data[p * m + i] = avg;
                self.data[q * m + i] = avg.conj();
            }
        }
        self.real = true;
    }

    /// `Σ_k f_k e^{2πik·θ}` by direct summation.
    pub fn evaluate(&self, theta: &[f64]) -> Vec<Complex64> {
        assert_eq!(theta.len(), self.dim());
        let m = self.ncomp;
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        for p in 0..self.window.len() {
            if self.is_zero_at(p) {
                continue;
            }
            let phase = Complex64::cis(TWO_PI * dot_i32(self.window.mode(p), theta));
            for (o, c) in out.iter_mut().zip(self.coeff_at(p)) {
                *o += c * phase;
            }
        }
        out
    }

    /// `f ∘ (id + u)` via `Σ_{α} ∂^α f · u^α / α!`, grouped by total order `m = |α|`.
    ///
    /// Summation stops once the order-`m` contribution has `Σ‖·‖₁ < tol`, or
    /// returns [`FourierError::NonConvergence`] if that has not happened by
    /// `order_cap`.
    pub fn compose_displacement(
        &self,
        u: &Self,
        order_cap: usize,
        tol: f64,
    ) -> Result<Self, FourierError> {
        let mut out = compose_all(&[self], u, order_cap, &[tol])?;
        Ok(out.pop().expect("one field in, one out"))
    }

    /// `∂^α f / α!`.
    fn scaled_derivative(&self, alpha: &[u32]) -> Self {
        let mut fact = 1.0;
        for &a in alpha {
            for i in 2..=a {
                fact *= i as f64;
            }
        }
        let mut g = self.clone();
        for p in 0..self.window.len() {
            if self.is_zero_at(p) {
                continue;
            }
            let k = self.window.mode(p);
            let mut factor = Complex64::new(1.0 / fact, 0.0);
            for (j, &a) in alpha.iter().enumerate() {
                let base = Complex64::new(0.0, TWO_PI * k[j] as f64);
                factor *= base.powu(a);
            }
            for c in g.coeff_at_mut(p) {
                *c *= factor;
            }
        }
        g
    }
}

fn coeff_l1(c: &[Complex64]) -> f64 {
    c.iter().map(|z| z.norm()).sum()
}

/// [`FourierField::compose_displacement`] for several fields sharing one `u`;
/// the monomials `u^α` are formed once.
pub fn compose_all(
    fields: &[&FourierField],
    u: &FourierField,
    order_cap: usize,
    tols: &[f64],
) -> Result<Vec<FourierField>, FourierError> {
    assert_eq!(fields.len(), tols.len());
    assert!(order_cap >= 1);
    let mut results: Vec<FourierField> = fields
        .iter()
        .map(|f| {
            f.assert_compatible(u);
            assert_eq!(u.ncomp, f.dim());
            (*f).clone().with_real(f.real && u.real)
        })
        .collect();
    if u.is_zero() {
        return Ok(results);
    }
    let d = u.ncomp;
    let mut done: Vec<bool> = fields.iter().map(|f| f.is_zero()).collect();
    let mut last = vec![f64::INFINITY; fields.len()];
    let comps: Vec<FourierField> = (0..d).map(|j| u.component(j)).collect();
    // (exponents, last index raised, u^α)
    let mut level: Vec<(Vec<u32>, usize, Option<FourierField>)> = vec![(vec![0; d], 0, None)];
    for _ in 1..=order_cap {
        if done.iter().all(|&x| x) {
            break;
        }
        let mut next = Vec::new();
        let mut terms: Vec<FourierField> = fields.iter().map(|f| f.zeros_like()).collect();
        for (alpha, start, mono) in &level {
            for j in *start..d {
                if comps[j].is_zero() {
                    continue;
                }
                let mut a2 = alpha.clone();
                a2[j] += 1;
                let mono2 = match mono {
                    None => comps[j].clone(),
                    Some(mo) => {
                        let mut s = mo.mul_scalar(&comps[j]);
                        s.compact(DEFAULT_DROP_TOL * 1e-4);
                        s
                    }
                };
                for (i, f) in fields.iter().enumerate() {
                    if !done[i] {
                        terms[i].add_assign(&f.scaled_derivative(&a2).mul_scalar(&mono2));
                    }
                }
                next.push((a2, j, Some(mono2)));
            }
        }
        for (i, term) in terms.iter().enumerate() {
            if done[i] {
                continue;
            }
            let tn = term.l1_sum();
            if tn == 0.0 {
                done[i] = true;
                continue;
            }
            results[i].add_assign(term);
            last[i] = tn;
            if tn < tols[i] {
                done[i] = true;
            }
        }
        level = next;
    }
    for (i, r) in results.iter_mut().enumerate() {
        if !done[i] && last[i] >= tols[i] {
            return Err(FourierError::NonConvergence {
                order: order_cap,
                last_term: last[i],
            });
        }
        r.real = fields[i].real && u.real;
        if !u.is_zero() && !fields[i].is_zero() {
            r.compact(DEFAULT_DROP_TOL);
        }
    }
    Ok(results)
}

/// `(I + Du)^{-1} g` as the Neumann series `Σ_n (−Du)^n g`.
///
/// Terms are added until one has `Σ‖·‖₁ < tol`. Five consecutive
/// non-decreasing term norms abort with [`FourierError::Divergence`].
pub fn neumann_inverse_apply(
    u: &FourierField,
    g: &FourierField,
    tol: f64,
    max_terms: usize,
) -> Result<FourierField, FourierError> {
    let mut result = g.clone();
    if u.is_zero() || g.is_zero() {
        return Ok(result);
    }
    let mut term = g.clone();
    let mut prev = term.l1_sum();
    let mut rising = 0;
    for n in 1..=max_terms {
        term = u.jacobian_apply(&term).scale(-1.0);
        let tn = term.l1_sum();
        if tn == 0.0 {
            return Ok(result);
        }
        result.add_assign(&term);
        if tn < tol {
            result.real = u.real && g.real;
            result.compact(DEFAULT_DROP_TOL);
            return Ok(result);
        }
        if tn >= prev {
            rising += 1;
            if rising >= 5 {
                return Err(FourierError::Divergence {
                    terms: n,
                    last_norm: tn,
                });
            }
        } else {
            rising = 0;
        }
        prev = tn;
    }
    Err(FourierError::Divergence {
        terms: max_terms,
        last_norm: prev,
    })
}

/// Number of Neumann terms actually used for a given input; diagnostics only.
pub fn neumann_term_count(u: &FourierField, g: &FourierField, tol: f64, max_terms: usize) -> usize {
    let mut term = g.clone();
    for n in 1..=max_terms {
        term = u.jacobian_apply(&term);
        if term.l1_sum() < tol {
            return n;
        }
    }
    max_terms
}
