//! Small dense helpers for integer matrices and complex vectors.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Row-major integer matrix.
pub type IntMatrix = Vec<Vec<i64>>;

pub fn identity(d: usize) -> IntMatrix {
    (0..d)
        .map(|i| (0..d).map(|j| i64::from(i == j)).collect())
        .collect()
}

pub fn transpose(a: &IntMatrix) -> IntMatrix {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect()
}

pub fn mat_mul(a: &IntMatrix, b: &IntMatrix) -> IntMatrix {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|l| a[i][l] * b[l][j]).sum())
                .collect()
        })
        .collect()
}

pub fn mat_pow(a: &IntMatrix, p: u32) -> IntMatrix {
    let mut r = identity(a.len());
    for _ in 0..p {
        r = mat_mul(&r, a);
    }
    r
}

/// Exact determinant by cofactor expansion (dimensions are tiny).
pub fn det(a: &IntMatrix) -> i128 {
    let n = a.len();
    match n {
        0 => 1,
        1 => a[0][0] as i128,
        _ => (0..n)
            .map(|j| {
                let minor = minor(a, 0, j);
                let sign = if j % 2 == 0 { 1 } else { -1 };
                sign * a[0][j] as i128 * det(&minor)
            })
            .sum(),
    }
}

fn minor(a: &IntMatrix, row: usize, col: usize) -> IntMatrix {
    a.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != col)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect()
}

/// Inverse of a unimodular matrix via the adjugate; `None` unless `det = ±1`.
pub fn unimodular_inverse(a: &IntMatrix) -> Option<IntMatrix> {
    let n = a.len();
    let dt = det(a);
    if dt != 1 && dt != -1 {
        return None;
    }
    let mut inv = vec![vec![0i64; n]; n];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let c = if n == 1 { 1 } else { det(&minor(a, j, i)) };
            let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
            *v = (sign * c * dt) as i64;
        }
    }
    Some(inv)
}

pub fn apply_f64(a: &IntMatrix, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|r| r.iter().zip(x).map(|(&m, &v)| m as f64 * v).sum())
        .collect()
}

/// `Aᵀ x`.
pub fn transpose_apply_f64(a: &IntMatrix, x: &[f64]) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| a[j][i] as f64 * x[j]).sum())
        .collect()
}

/// `Aᵀ k` in exact integer arithmetic.
pub fn transpose_apply_i64(a: &IntMatrix, k: &[i64]) -> Vec<i64> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| a[j][i] * k[j]).sum())
        .collect()
}

pub fn to_real_matrix(a: &IntMatrix) -> Vec<Vec<f64>> {
    a.iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

pub fn to_dmatrix(a: &IntMatrix) -> DMatrix<f64> {
    let n = a.len();
    DMatrix::from_fn(n, n, |i, j| a[i][j] as f64)
}

/// Operator norm induced by ℓ1: the largest absolute column sum.
pub fn l1_operator_norm(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n)
        .map(|j| (0..n).map(|i| a[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn cdot(a: &[Complex64], b: &[f64]) -> Complex64 {
    a.iter().zip(b).map(|(x, &y)| x * y).sum()
}

pub fn l1_norm_c(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}
