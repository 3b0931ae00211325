//! Independent checks by direct evaluation: ODE orbits on the lifted torus,
//! winding ratios, and the pointwise conjugacy identity behind one step.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::KTBasis;
use crate::fourier::FourierField;
use crate::renorm::StepOutput;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("the flow needs a real-flagged vector field")]
    NotReal,
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("initial point has dimension {found}, field has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("local error estimate {estimate:.3e} at t = {t:.3} exceeds 1e-6; reduce dt")]
    StepTooLarge { t: f64, estimate: f64 },
}

/// Fast pointwise evaluation through per-axis tables of `e^{2πimθ_j}`.
pub struct FieldEvaluator {
    dim: usize,
    radius: i32,
    modes: Vec<(Vec<i32>, Vec<Complex64>)>,
}

impl FieldEvaluator {
    pub fn new(f: &FourierField) -> Self {
        Self {
            dim: f.dim(),
            radius: f.trunc_radius() as i32,
            modes: f.iter().map(|(k, c)| (k.0, c.to_vec())).collect(),
        }
    }

    pub fn eval_complex(&self, theta: &[f64]) -> Vec<Complex64> {
        let r = self.radius;
        let side = (2 * r + 1) as usize;
        let mut table = vec![Complex64::new(0.0, 0.0); side * self.dim];
        for (j, &t) in theta.iter().enumerate() {
            let t = t.rem_euclid(1.0);
            for m in -r..=r {
                table[j * side + (m + r) as usize] = Complex64::cis(2.0 * PI * m as f64 * t);
            }
        }
        let mut out =
            vec![Complex64::new(0.0, 0.0); self.modes.first().map_or(self.dim, |m| m.1.len())];
        for (k, c) in &self.modes {
            let mut phase = Complex64::new(1.0, 0.0);
            for (j, &kj) in k.iter().enumerate() {
                phase *= table[j * side + (kj + r) as usize];
            }
            for (o, ci) in out.iter_mut().zip(c) {
                *o += ci * phase;
            }
        }
        out
    }

    /// Real part of the field value.
    pub fn eval(&self, theta: &[f64]) -> Vec<f64> {
        self.eval_complex(theta).into_iter().map(|z| z.re).collect()
    }
}

/// An orbit on the universal cover.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub theta0: Vec<f64>,
}

fn rk4_step(ev: &FieldEvaluator, x: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(p, q)| p + s * q).collect()
    };
    let k1 = ev.eval(x);
    let k2 = ev.eval(&add(x, &k1, 0.5 * h));
    let k3 = ev.eval(&add(x, &k2, 0.5 * h));
    let k4 = ev.eval(&add(x, &k3, h));
    x.iter()
        .enumerate()
        .map(|(i, &xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Classical RK4 for `θ' = X(θ)` on the lift, with a step-doubling error
/// monitor sampled about a hundred times along the orbit.
pub fn integrate(
    x: &FourierField,
    theta0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, FlowError> {
    if !x.is_real() {
        return Err(FlowError::NotReal);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::BadStep(dt));
    }
    if theta0.len() != x.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: x.dim(),
            found: theta0.len(),
        });
    }
    let ev = FieldEvaluator::new(x);
    let n = (t_end.abs() / dt).ceil().max(1.0) as usize;
    let h = t_end / n as f64;
    let check_every = (n / 100).max(1);
    let mut times = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    times.push(0.0);
    points.push(theta0.to_vec());
    let mut cur = theta0.to_vec();
    for s in 0..n {
        let next = rk4_step(&ev, &cur, h);
        if s % check_every == 0 {
            let half = rk4_step(&ev, &rk4_step(&ev, &cur, 0.5 * h), 0.5 * h);
            let estimate: f64 = next.iter().zip(&half).map(|(a, b)| (a - b).abs()).sum();
            if estimate > 1e-6 {
                return Err(FlowError::StepTooLarge {
                    t: s as f64 * h,
                    estimate,
                });
            }
        }
        cur = next;
        times.push((s + 1) as f64 * h);
        points.push(cur.clone());
    }
    Ok(Trajectory {
        times,
        points,
        theta0: theta0.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Winding {
    /// Unit ℓ1 direction of the displacement.
    Ratio { w: Vec<f64> },
    /// The orbit stayed within distance 10 of its start.
    Zero,
    /// Half- and full-horizon directions disagree by more than `1e-2`.
    Undefined { half: Vec<f64>, full: Vec<f64> },
}

impl Winding {
    /// `(w, confident)` as reported by the CLI.
    pub fn summary(&self, dim: usize) -> (Vec<f64>, bool) {
        match self {
            Winding::Ratio { w } => (w.clone(), true),
            Winding::Zero => (vec![0.0; dim], true),
            Winding::Undefined { full, .. } => (full.clone(), false),
        }
    }
}

/// Normalised displacement `Φ_t/‖Φ_t‖₁`, checked between `t_end/2` and `t_end`.
pub fn winding_ratio(traj: &Trajectory) -> Winding {
    let disp = |p: &[f64]| -> Vec<f64> { p.iter().zip(&traj.theta0).map(|(a, b)| a - b).collect() };
    let unit = |v: Vec<f64>| -> Vec<f64> {
        let n: f64 = v.iter().map(|x| x.abs()).sum();
        v.into_iter().map(|x| x / n).collect()
    };
    let last = disp(traj.points.last().expect("trajectory has a start point"));
    let end_norm: f64 = last.iter().map(|x| x.abs()).sum();
    if end_norm <= 10.0 {
        return Winding::Zero;
    }
    let mid = disp(&traj.points[(traj.points.len() - 1) / 2]);
    if mid.iter().all(|&x| x == 0.0) {
        return Winding::Undefined {
            half: mid,
            full: unit(last),
        };
    }
    let full = unit(last);
    let half = unit(mid);
    let gap: f64 = full.iter().zip(&half).map(|(a, b)| (a - b).abs()).sum();
    if gap > 1e-2 {
        Winding::Undefined { half, full }
    } else {
        Winding::Ratio { w: full }
    }
}

/// `max_θ ‖s·Dh(θ)Y(θ) − X(h(θ))‖₁` over a `grid_n^d` grid, with
/// `h = (id + u)∘T`, `Dh(θ) = (I + Du(Tθ))T`, `Y` the step output and `s` its rescale.
pub fn conjugacy_residual(x: &FourierField, step: &StepOutput, b: &KTBasis, grid_n: usize) -> f64 {
    let d = b.d;
    let ex = FieldEvaluator::new(x);
    let ey = FieldEvaluator::new(&step.field);
    let eu = FieldEvaluator::new(&step.u);
    let partials: Vec<FieldEvaluator> = (0..d)
        .map(|j| FieldEvaluator::new(&step.u.partial(j)))
        .collect();
    let total = grid_n.pow(d as u32);
    let mut worst: f64 = 0.0;
    let mut theta = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for t in theta.iter_mut() {
            *t = (r % grid_n) as f64 / grid_n as f64;
            r /= grid_n;
        }
        let phi = crate::linalg::apply_f64(&b.t, &theta);
        let uphi = eu.eval_complex(&phi);
        let h: Vec<f64> = phi.iter().zip(&uphi).map(|(p, u)| p + u.re).collect();
        // J = I + Du(φ), column j holds ∂_j u.
        let cols: Vec<Vec<Complex64>> = partials.iter().map(|e| e.eval_complex(&phi)).collect();
        let y = ey.eval_complex(&theta);
        let ty: Vec<Complex64> =
            b.t.iter()
                .map(|row| row.iter().zip(&y).map(|(&m, z)| z * m as f64).sum())
                .collect();
        let mut lhs = ty.clone();
        for (j, col) in cols.iter().enumerate() {
            for i in 0..d {
                lhs[i] += col[i] * ty[j];
            }
        }
        let xh = ex.eval_complex(&h);
        let err: f64 = lhs
            .iter()
            .zip(&xh)
            .map(|(a, c)| (a * step.rescale - c).norm())
            .sum();
        worst = worst.max(err);
    }
    worst
}
