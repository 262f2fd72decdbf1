//! Deterministic solution of `du/dt = (Laplacian + xi) u` on a Dirichlet window.
//!
//! Three independent routes:
//!
//! * uniformisation: Taylor series of `exp(t (S + nu I))` with `nu` chosen so
//!   that `S + nu I` is entrywise non-negative (no cancellation), time-stepped
//!   and renormalised so large `t` does not overflow;
//! * Dormand-Prince 5(4) with adaptive steps on the adjoint system `u' = H^T u`;
//! * the full eigensystem.
//!
//! `u^y(x, t)` is the Feynman-Kac kernel from `y`; the total mass is
//! `U^y(t) = sum_x u^y(x, t)`.

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::spectral::{evolve_spectral, DirichletWindow, SymOperator};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Uniformization,
    RungeKutta,
    Spectral,
}

/// `exp(t S) v = exp(log_scale) * vector`.
#[derive(Debug, Clone)]
pub struct ScaledVector {
    pub vector: Vec<f64>,
    pub log_scale: f64,
}

/// Action of `exp(t S)` on `v` by uniformisation.
pub fn expm_action(op: &SymOperator, v: &[f64], t: f64) -> ScaledVector {
    let n = op.dim();
    let shift = op.diag.iter().map(|d| -d).fold(0.0, f64::max);
    let rate = (0..n)
        .map(|i| op.diag[i] + shift + op.row(i).map(|(_, x)| x).sum::<f64>())
        .fold(0.0, f64::max);
    let per_step = 8.0;
    let steps = ((t * rate / per_step).ceil() as usize).max(1);
    let h = t / steps as f64;
    let mut cur = v.to_vec();
    let mut log_scale = -shift * t;
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        let mut sum = cur.clone();
        term.copy_from_slice(&cur);
        let mut k = 1usize;
        loop {
            op.apply(&term, &mut next);
            let c = h / k as f64;
            for i in 0..n {
                term[i] = c * (next[i] + shift * term[i]);
                sum[i] += term[i];
            }
            let tn: f64 = term.iter().map(|x| x.abs()).sum();
            let sn: f64 = sum.iter().map(|x| x.abs()).sum();
            if (k as f64 > h * rate && tn <= 1e-17 * sn) || tn == 0.0 || k > 400 {
                break;
            }
            k += 1;
        }
        let m = sum.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if m > 0.0 {
            sum.iter_mut().for_each(|x| *x /= m);
            log_scale += m.ln();
        }
        cur = sum;
    }
    ScaledVector { vector: cur, log_scale }
}

fn check_start(window: &DirichletWindow, y: usize, t: f64) -> Result<()> {
    if !window.contains(y) {
        return Err(invalid(format!("start vertex {y} not in window")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t must be finite and non-negative"));
    }
    Ok(())
}

/// Kernel row `x -> u^y(x, t)`, aligned with the window vertices.
pub fn evolve(window: &DirichletWindow, q: &[f64], y: usize, t: f64, method: Method) -> Result<Vec<f64>> {
    check_start(window, y, t)?;
    if t == 0.0 {
        if q.get(y) == Some(&f64::NEG_INFINITY) {
            return Err(invalid("start vertex deleted"));
        }
        let mut out = vec![0.0; window.len()];
        out[window.index_of(y).unwrap()] = 1.0;
        return Ok(out);
    }
    match method {
        // eigen-expansion round-off can dip below zero; the kernel cannot
        Method::Spectral => Ok(evolve_spectral(window, q, y, t)?.into_iter().map(|x| x.max(0.0)).collect()),
        Method::Uniformization => {
            let op = window.operator(q)?;
            let iy = op.active.iter().position(|&v| v == y).ok_or_else(|| invalid("start vertex deleted"))?;
            let mut e = vec![0.0; op.dim()];
            e[iy] = 1.0;
            let res = expm_action(&op, &e, t);
            let scale = res.log_scale.exp();
            let mut out = vec![0.0; window.len()];
            for (i, &v) in op.active.iter().enumerate() {
                out[window.index_of(v).unwrap()] = scale * res.vector[i] * op.sqrt_w[i] / op.sqrt_w[iy];
            }
            Ok(out)
        }
        Method::RungeKutta => {
            let adj = AdjointSystem::new(window, q)?;
            let iy = adj.index(y).ok_or_else(|| invalid("start vertex deleted"))?;
            let mut u0 = vec![0.0; adj.active.len()];
            u0[iy] = 1.0;
            let u = dopri5(&adj, u0, t, 1e-12)?;
            let mut out = vec![0.0; window.len()];
            for (i, &v) in adj.active.iter().enumerate() {
                out[window.index_of(v).unwrap()] = u[i];
            }
            Ok(out)
        }
    }
}

/// `ln U^y(t)`, computed by uniformisation of the all-ones vector.
pub fn log_total_mass(window: &DirichletWindow, q: &[f64], y: usize, t: f64) -> Result<f64> {
    check_start(window, y, t)?;
    let op = window.operator(q)?;
    let iy = op.active.iter().position(|&v| v == y).ok_or_else(|| invalid("start vertex deleted"))?;
    // U = (exp(tH) 1)(y) = w(y)^{-1/2} (exp(tS) W^{1/2} 1)(y)
    let res = expm_action(&op, &op.sqrt_w, t);
    Ok(res.log_scale + (res.vector[iy] / op.sqrt_w[iy]).ln())
}

/// Total mass `U^y(t)` by the chosen method.
pub fn total_mass(window: &DirichletWindow, q: &[f64], y: usize, t: f64, method: Method) -> Result<f64> {
    match method {
        Method::Uniformization => Ok(log_total_mass(window, q, y, t)?.exp()),
        _ => Ok(evolve(window, q, y, t, method)?.iter().sum()),
    }
}

/// `(t, ln U^y(t) / t)` on an increasing grid of positive times.
pub fn growth_curve(window: &DirichletWindow, q: &[f64], y: usize, times: &[f64]) -> Result<Vec<(f64, f64)>> {
    if times.iter().any(|&t| !(t > 0.0)) || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("times must be positive and increasing"));
    }
    times.iter().map(|&t| Ok((t, log_total_mass(window, q, y, t)? / t))).collect()
}

/// `u' = H^T u` with `(H^T u)(x) = (q(x) - deg(x)/w(x)) u(x) + sum_{z ~ x} u(z)/w(z)`.
struct AdjointSystem {
    active: Vec<usize>,
    diag: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl AdjointSystem {
    fn new(window: &DirichletWindow, q: &[f64]) -> Result<Self> {
        let g = window.graph();
        if q.len() != g.n() {
            return Err(invalid("potential length differs from graph size"));
        }
        let active: Vec<usize> =
            window.vertices().iter().copied().filter(|&v| q[v] != f64::NEG_INFINITY).collect();
        let mut pos = vec![usize::MAX; g.n()];
        for (i, &v) in active.iter().enumerate() {
            pos[v] = i;
        }
        let mut diag = Vec::new();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &x in &active {
            diag.push(q[x] - g.degree(x) as f64 / window.weight(x));
            for &z in g.neighbors(x) {
                if pos[z] != usize::MAX {
                    cols.push(pos[z]);
                    vals.push(1.0 / window.weight(z));
                }
            }
            offsets.push(cols.len());
        }
        Ok(Self { active, diag, offsets, cols, vals })
    }

    fn index(&self, v: usize) -> Option<usize> {
        self.active.iter().position(|&x| x == v)
    }

    fn rhs(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..u.len() {
            let mut acc = self.diag[i] * u[i];
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.vals[k] * u[self.cols[k]];
            }
            out[i] = acc;
        }
    }
}

/// Dormand-Prince 5(4) with mixed absolute/relative error control.
fn dopri5(sys: &AdjointSystem, mut y: Vec<f64>, t_end: f64, rtol: f64) -> Result<Vec<f64>> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let n = y.len();
    if t_end == 0.0 || n == 0 {
        return Ok(y);
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut t = 0.0;
    let mut h = (t_end / 100.0).min(0.01);
    sys.rhs(&y, &mut k[0]);
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > 10_000_000 {
            return Err(crate::Error::NoConvergence("Runge-Kutta step limit".into()));
        }
        if t + h > t_end {
            h = t_end - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * k[j][i];
                }
                tmp[i] = acc;
            }
            sys.rhs(&tmp, &mut k[s]);
        }
        let ymax = y.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let atol = rtol * ymax;
        let mut err = 0.0;
        for i in 0..n {
            let mut y5i = y[i];
            let mut e = 0.0;
            for s in 0..7 {
                y5i += h * B5[s] * k[s][i];
                e += h * (B5[s] - B4[s]) * k[s][i];
            }
            y5[i] = y5i;
            let sc = atol + rtol * y[i].abs().max(y5i.abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut y5);
            let last = k.pop().unwrap();
            k.insert(0, last);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok(y)
}
