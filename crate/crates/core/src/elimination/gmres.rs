use num_complex::Complex64;

pub(crate) struct GmresOutcome {
    pub x: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Restarted GMRES for `A x = b`, starting from zero.
///
/// Stops once the (Euclidean) residual is below `tol · ‖b‖`.
pub(crate) fn gmres<F>(
    apply: F,
    b: &[Complex64],
    restart: usize,
    max_iter: usize,
    tol: f64,
) -> GmresOutcome
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return GmresOutcome {
            x,
            residual: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let target = tol * bnorm;
    let mut total = 0;
    let mut r: Vec<Complex64> = b.to_vec();
    let mut beta = bnorm;
    while total < max_iter {
        let m = restart.min(max_iter - total).min(n.max(1));
        let mut v: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|z| z / beta).collect());
        let mut h = vec![vec![zero; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![zero; m];
        let mut g = vec![zero; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut used = 0;
        for j in 0..m {
            let mut w = apply(&v[j]);
            // Modified Gram-Schmidt, applied twice for stability.
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = inner(vi, &w);
                    h[i][j] += c;
                    for (wk, vk) in w.iter_mut().zip(vi) {
                        *wk -= c * vk;
                    }
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = Complex64::new(hn, 0.0);
            for i in 0..j {
                let t = h[i][j];
                let u = h[i + 1][j];
                h[i][j] = t * cs[i] + sn[i] * u;
                h[i + 1][j] = -sn[i].conj() * t + u * cs[i];
            }
            let a = h[j][j];
            let bb = h[j + 1][j];
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = zero;
            } else if a.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = bb.conj() / bb.norm();
            } else {
                cs[j] = a.norm() / denom;
                sn[j] = (a / a.norm()) * bb.conj() / denom;
            }
            h[j][j] = cs[j] * a + sn[j] * bb;
            h[j + 1][j] = zero;
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] *= cs[j];
            used = j + 1;
            total += 1;
            if g[j + 1].norm() <= target || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }
        // Back substitution for the least-squares coefficients.
        let mut y = vec![zero; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for l in i + 1..used {
                s -= h[i][l] * y[l];
            }
            y[i] = s / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xk, vk) in x.iter_mut().zip(&v[i]) {
                *xk += yi * vk;
            }
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        beta = norm(&r);
        if beta <= target {
            return GmresOutcome {
                x,
                residual: beta / bnorm,
                iterations: total,
                converged: true,
            };
        }
    }
    GmresOutcome {
        x,
        residual: beta / bnorm,
        iterations: total,
        converged: false,
    }
}
