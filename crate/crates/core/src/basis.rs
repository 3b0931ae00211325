//! Frequency data: a hyperbolic `T ∈ GL(d, Z)` with one expanding
//! eigenvalue `λ₁`, the frequency `ω` (its `λ₁`-eigenvector with `ω₁ = 1`)
//! and the dual vector `ω̄` (the `λ₁`-eigenvector of `T*` with `ω̄·ω = 1`).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier::Window;
use crate::linalg::{self, IntMatrix};
use crate::resonance::{cone_report, cone_vertex_max, ResonanceParams};

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("matrix is not square with dimension >= 2")]
    NotSquare,
    #[error("matrix is not unimodular (det = {0})")]
    NotUnimodular(i128),
    #[error("bad spectrum: {0}")]
    BadSpectrum(String),
    #[error("leading eigenvector has vanishing first component")]
    DegenerateEigenvector,
    #[error("basis invariant failed: {0}")]
    Certification(String),
    #[error("radii must satisfy 0 < rho' < rho, got rho = {rho}, rho' = {rho_prime}")]
    InvalidRadii { rho: f64, rho_prime: f64 },
    #[error("no feasible (sigma, kappa) for power {power}: cone ratio {ratio:.4} at sigma -> 0 exceeds rho'/rho = {target:.4}; try a larger power of T")]
    NoFeasibleParams { power: u32, ratio: f64, target: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Golden,
    Plastic,
}

impl Preset {
    pub fn matrix(self) -> IntMatrix {
        match self {
            Preset::Golden => vec![vec![0, 1], vec![1, 1]],
            Preset::Plastic => vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 1, 0]],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KTBasis {
    pub d: usize,
    pub omega: Vec<f64>,
    pub omega_bar: Vec<f64>,
    #[serde(rename = "T")]
    pub t: IntMatrix,
    #[serde(rename = "T_star")]
    pub t_star: IntMatrix,
    #[serde(rename = "T_inv")]
    pub t_inv: IntMatrix,
    /// `λ₁` first, then by decreasing modulus.
    pub lambda: Vec<Complex64>,
    /// `ω^(1) = ω, ω^(2), …, ω^(d)`; entries after the first are ℓ2-normalised.
    pub evecs: Vec<Vec<Complex64>>,
    pub power: u32,
}

pub fn golden_basis() -> KTBasis {
    KTBasis::preset(Preset::Golden, 1).expect("golden preset certifies")
}

pub fn plastic_basis() -> KTBasis {
    KTBasis::preset(Preset::Plastic, 1).expect("plastic preset certifies")
}

pub fn from_matrix(t: IntMatrix) -> Result<KTBasis, BasisError> {
    KTBasis::from_matrix_power(t, 1)
}

impl KTBasis {
    pub fn preset(preset: Preset, power: u32) -> Result<Self, BasisError> {
        Self::from_matrix_power(preset.matrix(), power)
    }

    /// Certifies `base^power`.
    pub fn from_matrix_power(base: IntMatrix, power: u32) -> Result<Self, BasisError> {
        let d = base.len();
        if d < 2 || base.iter().any(|r| r.len() != d) || power == 0 {
            return Err(BasisError::NotSquare);
        }
        let t = linalg::mat_pow(&base, power);
        let det = linalg::det(&t);
        let t_inv = linalg::unimodular_inverse(&t).ok_or(BasisError::NotUnimodular(det))?;
        let t_star = linalg::transpose(&t);

        let tm = linalg::to_dmatrix(&t);
        let mut lambda: Vec<Complex64> = tm.clone().complex_eigenvalues().iter().copied().collect();
        lambda.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
        let outside = lambda.iter().filter(|l| l.norm() > 1.0 + 1e-12).count();
        if lambda.iter().any(|l| (l.norm() - 1.0).abs() <= 1e-12) {
            return Err(BasisError::BadSpectrum(
                "eigenvalue on the unit circle".into(),
            ));
        }
        if outside != 1 {
            return Err(BasisError::BadSpectrum(format!(
                "{outside} eigenvalues outside the unit circle, need exactly one"
            )));
        }
        if lambda[0].im.abs() > 1e-12 {
            return Err(BasisError::BadSpectrum(
                "leading eigenvalue is not real".into(),
            ));
        }
        for i in 0..d {
            for j in i + 1..d {
                if (lambda[i] - lambda[j]).norm() < 1e-8 {
                    return Err(BasisError::BadSpectrum("repeated eigenvalue".into()));
                }
            }
        }
        let l1 = lambda[0].re;
        lambda[0] = Complex64::new(l1, 0.0);

        let t_real = linalg::to_real_matrix(&t);
        let ts_real = linalg::to_real_matrix(&t_star);
        let omega = real_eigvec(&t_real, l1)?;
        let mut omega_bar = real_eigvec(&ts_real, l1)?;
        let s: f64 = omega_bar.iter().zip(&omega).map(|(a, b)| a * b).sum();
        for v in &mut omega_bar {
            *v /= s;
        }

        let mut evecs = vec![omega.iter().map(|&x| Complex64::new(x, 0.0)).collect()];
        for &l in &lambda[1..] {
            evecs.push(complex_eigvec(&tm, l));
        }

        let b = KTBasis {
            d,
            omega,
            omega_bar,
            t,
            t_star,
            t_inv,
            lambda,
            evecs,
            power,
        };
        b.certify()?;
        Ok(b)
    }

    fn certify(&self) -> Result<(), BasisError> {
        let fail = |m: String| Err(BasisError::Certification(m));
        let l1 = self.lambda1();
        let to = linalg::apply_f64(&self.t, &self.omega);
        let e1: f64 = to
            .iter()
            .zip(&self.omega)
            .map(|(a, b)| (a - l1 * b).abs())
            .sum();
        if e1 >= 1e-12 * l1.max(1.0) {
            return fail(format!("|T omega - lambda1 omega| = {e1:e}"));
        }
        let tb = linalg::apply_f64(&self.t_star, &self.omega_bar);
        let e2: f64 = tb
            .iter()
            .zip(&self.omega_bar)
            .map(|(a, b)| (a - l1 * b).abs())
            .sum();
        if e2 >= 1e-12 * l1.max(1.0) {
            return fail(format!("|T* omega_bar - lambda1 omega_bar| = {e2:e}"));
        }
        let pair: f64 = self
            .omega_bar
            .iter()
            .zip(&self.omega)
            .map(|(a, b)| a * b)
            .sum();
        if (pair - 1.0).abs() >= 1e-14 {
            return fail(format!("omega_bar . omega = {pair}"));
        }
        let prod: f64 = self.lambda.iter().map(|l| l.norm()).product();
        if (prod - 1.0).abs() >= 1e-12 {
            return fail(format!("product of |lambda_j| = {prod}"));
        }
        for (j, v) in self.evecs.iter().enumerate().skip(1) {
            let ip = linalg::cdot(v, &self.omega_bar).norm();
            if ip >= 1e-12 {
                return fail(format!("omega_bar . omega^({}) = {ip:e}", j + 1));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda[0].re
    }

    pub fn t_inv_real(&self) -> Vec<Vec<f64>> {
        linalg::to_real_matrix(&self.t_inv)
    }

    pub fn omega_bar_l1(&self) -> f64 {
        self.omega_bar.iter().map(|v| v.abs()).sum()
    }

    /// `½‖ω̄‖⁻¹`, the upper limit on the resonance width.
    pub fn sigma_bound(&self) -> f64 {
        0.5 / self.omega_bar_l1()
    }

    /// `β = −1 − ln|λ₁| / ln|λ₂|`.
    pub fn beta(&self) -> f64 {
        -1.0 - self.lambda1().abs().ln() / self.lambda[1].norm().ln()
    }

    /// `min_{0<‖k‖≤K} |ω·k| ‖k‖^{β+1}`; positive means the diophantine bound holds with that constant.
    pub fn diophantine_constant(&self, radius: u32) -> f64 {
        let w = Window::get(self.d, radius);
        let e = self.beta() + 1.0;
        w.positions()
            .filter(|&q| q != w.zero_position())
            .map(|q| {
                let k = w.mode(q);
                crate::fourier::dot_i32(k, &self.omega).abs() * (w.l1(q) as f64).powf(e)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `(‖T⁻¹‖₁, |λ₁|)`, logging when the first exceeds the second.
    pub fn t_inv_norm_check(&self) -> (f64, f64) {
        let n = linalg::l1_operator_norm(&self.t_inv_real());
        let l = self.lambda1().abs();
        if n > l {
            log::warn!("l1 operator norm of T^-1 is {n:.6}, exceeding |lambda1| = {l:.6}");
        }
        (n, l)
    }

    /// Applies `T⁻¹` to a complex vector.
    pub fn apply_t_inv(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.t_inv
            .iter()
            .map(|r| r.iter().zip(v).map(|(&m, z)| z * m as f64).sum())
            .collect()
    }

    pub fn omega_bar_dot(&self, v: &[Complex64]) -> Complex64 {
        linalg::cdot(v, &self.omega_bar)
    }
}

/// Real eigenvector of `a` for the simple real eigenvalue `l`, normalised to first component 1.
fn real_eigvec(a: &[Vec<f64>], l: f64) -> Result<Vec<f64>, BasisError> {
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j] - if i == j { l } else { 0.0 });
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let imin = (0..n)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .expect("nonempty");
    let mut v: Vec<f64> = (0..n).map(|j| v_t[(imin, j)]).collect();
    let scale: f64 = v.iter().map(|x| x.abs()).sum();
    if v[0].abs() < 1e-12 * scale {
        return Err(BasisError::DegenerateEigenvector);
    }
    // Power steps polish the direction; `l` dominates so they cannot drift away.
    for _ in 0..8 {
        let first = v[0];
        for x in &mut v {
            *x /= first;
        }
        let av: Vec<f64> = a
            .iter()
            .map(|r| r.iter().zip(&v).map(|(p, q)| p * q).sum())
            .collect();
        v = av;
    }
    let first = v[0];
    for x in &mut v {
        *x /= first;
    }
    Ok(v)
}

pub(crate) fn complex_eigvec(t: &DMatrix<f64>, l: Complex64) -> Vec<Complex64> {
    let n = t.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(t[(i, j)], 0.0) - if i == j { l } else { Complex64::new(0.0, 0.0) }
    });
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let imin = (0..n)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .expect("nonempty");
    let mut v: Vec<Complex64> = (0..n).map(|j| v_t[(imin, j)].conj()).collect();
    // Fix the phase: largest entry real and positive.
    let big = (0..n)
        .max_by(|&i, &j| v[i].norm().total_cmp(&v[j].norm()))
        .expect("nonempty");
    let phase = v[big].conj() / v[big].norm();
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut v {
        *z *= phase / norm;
    }
    v
}

/// Bisection for the largest admissible resonance width.
///
/// With `c = ρ'/ρ`, finds `σ*` such that the cone ratio stays below `c`,
/// takes `σ = 0.9σ*` and `κ` midway between the ratio at `σ` and `c`, then
/// verifies the cone condition on the lattice of radius `radius`.
pub fn choose_params(
    b: &KTBasis,
    rho: f64,
    rho_prime: f64,
    radius: u32,
) -> Result<ResonanceParams, BasisError> {
    if !(rho_prime > 0.0 && rho_prime < rho) {
        return Err(BasisError::InvalidRadii { rho, rho_prime });
    }
    let c = rho_prime / rho;
    let ratio = |s: f64| cone_vertex_max(&b.t, &b.omega, s).0;
    let hi_bound = b.sigma_bound();
    let floor = ratio(1e-12 * hi_bound);
    if floor >= c {
        return Err(BasisError::NoFeasibleParams {
            power: b.power,
            ratio: floor,
            target: c,
        });
    }
    let sigma_star = if ratio(hi_bound) < c {
        hi_bound
    } else {
        let (mut lo, mut hi) = (1e-12 * hi_bound, hi_bound);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) < c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let sigma = 0.9 * sigma_star;
    let kappa = 0.5 * (c + ratio(sigma));
    let p = ResonanceParams {
        omega: b.omega.clone(),
        sigma,
        kappa,
    };
    let report = cone_report(&b.t, &p, 4000, radius);
    if !report.ok {
        return Err(BasisError::NoFeasibleParams {
            power: b.power,
            ratio: report.max_ratio,
            target: c,
        });
    }
    Ok(p)
}
