#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use torus_renorm::fourier::{FourierField, MultiIndex, NormKind, Window};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Dense random field with coefficients of size `amp·e^{−decay‖k‖}`.
/// Real fields get Hermitian-symmetric coefficients.
pub fn random_field<R: Rng>(
    rng: &mut R,
    d: usize,
    k: u32,
    decay: f64,
    amp: f64,
    real: bool,
) -> FourierField {
    let w = Window::get(d, k);
    let mut modes = Vec::new();
    for q in w.positions() {
        let nq = w.negation(q);
        if real && nq < q {
            continue;
        }
        let s = amp * (-decay * w.l1(q) as f64).exp();
        let v: Vec<Complex64> = (0..d)
            .map(|_| {
                let im = if real && nq == q {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                };
                c(rng.gen_range(-1.0..1.0), im) * s
            })
            .collect();
        if real && nq != q {
            modes.push((w.multi_index(nq), v.iter().map(|z| z.conj()).collect()));
        }
        modes.push((w.multi_index(q), v));
    }
    FourierField::from_modes(d, k, real, modes).unwrap()
}

/// Rescales `f` to have `‖f‖'_r = target`.
pub fn with_prime_norm(f: &FourierField, r: f64, target: f64) -> FourierField {
    let n = f.norm(NormKind::Prime(r));
    f.scale(target / n).with_real(f.is_real())
}

/// `e^{2πimx_j}` for `|m| ≤ K`, row `j` holding axis `j`.
fn phase_table(x: &[Complex64], k: i32) -> Vec<Complex64> {
    let side = (2 * k + 1) as usize;
    let mut table = vec![c(0.0, 0.0); side * x.len()];
    for (j, xj) in x.iter().enumerate() {
        for m in -k..=k {
            table[j * side + (m + k) as usize] = (c(0.0, 2.0 * PI * m as f64) * xj).exp();
        }
    }
    table
}

fn phase(table: &[Complex64], k: i32, mi: &[i32]) -> Complex64 {
    let side = (2 * k + 1) as usize;
    let mut ph = c(1.0, 0.0);
    for (j, &kj) in mi.iter().enumerate() {
        ph *= table[j * side + (kj + k) as usize];
    }
    ph
}

/// Mode list snapshot for repeated direct summation.
pub struct Direct {
    k: i32,
    dim: usize,
    modes: Vec<(Vec<i32>, Vec<Complex64>)>,
}

impl Direct {
    pub fn new(f: &FourierField) -> Self {
        Self {
            k: f.trunc_radius() as i32,
            dim: f.dim(),
            modes: f.iter().map(|(mi, v)| (mi.0, v.to_vec())).collect(),
        }
    }

    /// `Σ_k f_k e^{2πik·x}` at a complex point.
    pub fn eval(&self, x: &[Complex64]) -> Vec<Complex64> {
        let table = phase_table(x, self.k);
        let ncomp = self.modes.first().map_or(self.dim, |m| m.1.len());
        let mut out = vec![c(0.0, 0.0); ncomp];
        for (mi, coeffs) in &self.modes {
            let ph = phase(&table, self.k, mi);
            for (o, v) in out.iter_mut().zip(coeffs) {
                *o += v * ph;
            }
        }
        out
    }

    /// `J[i][j] = ∂_j f^i` at `x`, summing `2πi k_j f_k e^{2πik·x}`.
    pub fn jacobian(&self, x: &[Complex64]) -> Vec<Vec<Complex64>> {
        let d = self.dim;
        let table = phase_table(x, self.k);
        let mut m = vec![vec![c(0.0, 0.0); d]; d];
        for (mi, coeffs) in &self.modes {
            let ph = phase(&table, self.k, mi);
            for i in 0..d {
                let a = coeffs[i] * ph;
                for j in 0..d {
                    m[i][j] += a * c(0.0, 2.0 * PI * mi[j] as f64);
                }
            }
        }
        m
    }
}

pub fn eval_direct(f: &FourierField, x: &[Complex64]) -> Vec<Complex64> {
    Direct::new(f).eval(x)
}

/// Grid points `θ = i/n` in lexicographic order.
pub fn grid(n: usize, d: usize) -> Vec<Vec<f64>> {
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut th = vec![0.0; d];
            for t in th.iter_mut().rev() {
                *t = (idx % n) as f64 / n as f64;
                idx /= n;
            }
            th
        })
        .collect()
}

pub fn real_point(th: &[f64]) -> Vec<Complex64> {
    th.iter().map(|&t| c(t, 0.0)).collect()
}

/// Direct DFT of grid samples onto the window `‖k‖ ≤ radius`.
pub fn dft_to_window(
    samples: &[Vec<Complex64>],
    n: usize,
    d: usize,
    radius: u32,
    real: bool,
) -> FourierField {
    let w = Window::get(d, radius);
    let pts = grid(n, d);
    let ncomp = samples[0].len();
    let k = radius as i32;
    let side = (2 * k + 1) as usize;
    // e^{−2πi m θ} for each grid value θ = i/n.
    let mut tab = vec![c(0.0, 0.0); n * side];
    for i in 0..n {
        for m in -k..=k {
            tab[i * side + (m + k) as usize] =
                c(0.0, -2.0 * PI * (m as f64) * (i as f64) / n as f64).exp();
        }
    }
    let mut modes = Vec::new();
    let scale = 1.0 / pts.len() as f64;
    for q in w.positions() {
        let km = w.mode(q);
        let mut acc = vec![c(0.0, 0.0); ncomp];
        for (p, th) in pts.iter().enumerate() {
            let mut ph = c(1.0, 0.0);
            for j in 0..d {
                let i = (th[j] * n as f64).round() as usize;
                ph *= tab[i * side + (km[j] + k) as usize];
            }
            for (a, s) in acc.iter_mut().zip(&samples[p]) {
                *a += s * ph;
            }
        }
        modes.push((
            MultiIndex(km.to_vec()),
            acc.into_iter().map(|z| z * scale).collect(),
        ));
    }
    assert_eq!(ncomp, d, "dft_to_window builds vector fields only");
    FourierField::from_modes(d, radius, real, modes).unwrap()
}

/// Largest coefficient difference, entrywise in modulus.
pub fn max_coeff_diff(a: &FourierField, b: &FourierField) -> f64 {
    assert_eq!(a.window().len(), b.window().len());
    let mut worst: f64 = 0.0;
    for q in a.window().positions() {
        for (x, y) in a.coeff_at(q).iter().zip(b.coeff_at(q)) {
            worst = worst.max((x - y).norm());
        }
    }
    worst
}

/// Solves the small dense system `A x = b` by Gaussian elimination with pivoting.
pub fn solve_small(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].norm().partial_cmp(&a[j][col].norm()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (x, v) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![c(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

pub fn jacobian_direct(f: &FourierField, x: &[Complex64]) -> Vec<Vec<Complex64>> {
    Direct::new(f).jacobian(x)
}
