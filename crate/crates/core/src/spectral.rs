//! The Anderson Hamiltonian on a Dirichlet window.
//!
//! On a window `L` of a graph `G` with vertex weights `w` the operator is
//!
//! ```text
//! (H f)(x) = (1/w(x)) * sum_{y ~ x} (f(y) - f(x)) + q(x) f(x),   f = 0 off L,
//! ```
//!
//! restricted to functions supported on `L`. With `w = deg` (degrees in the
//! full graph) this is the normalised Laplacian plus potential; `w = 1` gives
//! the combinatorial Laplacian. `H` is self-adjoint for `<f, g> = sum w f g`
//! and is diagonalised through the symmetric matrix `W^{1/2} H W^{-1/2}`.
//! Entries `q(x) = -inf` delete `x` from the window.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::graph::{BallView, RootedGraph};
use crate::potential::{IslandSystem, PotentialField};
use crate::{Error, Result};

const NONE: usize = usize::MAX;

/// Vertex weights entering the Laplacian and the inner product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Weighting {
    /// `w = deg`, the normalised Laplacian. An isolated vertex gets weight 1.
    Degree,
    /// `w = 1`, the combinatorial Laplacian.
    Unit,
    /// Arbitrary positive weights indexed by vertex label.
    Custom(Vec<f64>),
}

impl Weighting {
    pub fn weight(&self, g: &RootedGraph, v: usize) -> f64 {
        match self {
            Weighting::Degree => g.degree(v).max(1) as f64,
            Weighting::Unit => 1.0,
            Weighting::Custom(w) => w[v],
        }
    }
}

/// A window `L` in a graph; the complement is a killing (Dirichlet) boundary.
#[derive(Debug, Clone)]
pub struct DirichletWindow<'g> {
    graph: &'g RootedGraph,
    vertices: Vec<usize>,
    local: Vec<usize>,
    weighting: Weighting,
}

impl<'g> DirichletWindow<'g> {
    /// Window on the given vertices (sorted and deduplicated), degree weights.
    pub fn new(graph: &'g RootedGraph, vertices: &[usize]) -> Result<Self> {
        let mut vs = vertices.to_vec();
        vs.sort_unstable();
        vs.dedup();
        if vs.is_empty() {
            return Err(invalid("empty window"));
        }
        for &v in &vs {
            graph.check_vertex(v)?;
        }
        let mut local = vec![NONE; graph.n()];
        for (i, &v) in vs.iter().enumerate() {
            local[v] = i;
        }
        Ok(Self { graph, vertices: vs, local, weighting: Weighting::Degree })
    }

    /// The whole graph as window.
    pub fn whole(graph: &'g RootedGraph) -> Self {
        let vs: Vec<usize> = (0..graph.n()).collect();
        Self::new(graph, &vs).expect("graphs are non-empty")
    }

    pub fn from_ball(graph: &'g RootedGraph, b: &BallView) -> Result<Self> {
        Self::new(graph, b.vertices())
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Result<Self> {
        if let Weighting::Custom(w) = &weighting {
            if w.len() != self.graph.n() || w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(invalid("custom weights must be positive, one per vertex"));
            }
        }
        self.weighting = weighting;
        Ok(self)
    }

    pub fn graph(&self) -> &'g RootedGraph {
        self.graph
    }

    /// Window vertices in increasing label order.
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.local.get(v).is_some_and(|&i| i != NONE)
    }

    /// Position of `v` in [`Self::vertices`].
    pub fn index_of(&self, v: usize) -> Option<usize> {
        self.local.get(v).copied().filter(|&i| i != NONE)
    }

    pub fn weighting(&self) -> &Weighting {
        &self.weighting
    }

    pub fn weight(&self, v: usize) -> f64 {
        self.weighting.weight(self.graph, v)
    }

    /// Sub-window on `subset` (must lie inside this window), same weighting.
    pub fn restrict(&self, subset: &[usize]) -> Result<DirichletWindow<'g>> {
        if subset.iter().any(|&v| !self.contains(v)) {
            return Err(invalid("sub-window leaves the window"));
        }
        DirichletWindow::new(self.graph, subset)?.with_weighting(self.weighting.clone())
    }

    /// Symmetrised operator `W^{1/2} H W^{-1/2}` on the vertices with finite `q`.
    pub fn operator(&self, q: &[f64]) -> Result<SymOperator> {
        let g = self.graph;
        if q.len() != g.n() {
            return Err(invalid(format!("potential has {} entries, graph has {}", q.len(), g.n())));
        }
        let active: Vec<usize> =
            self.vertices.iter().copied().filter(|&v| q[v] != f64::NEG_INFINITY).collect();
        if active.iter().any(|&v| !q[v].is_finite()) {
            return Err(invalid("potential must be finite or -inf on the window"));
        }
        let mut pos = vec![NONE; g.n()];
        for (i, &v) in active.iter().enumerate() {
            pos[v] = i;
        }
        let sqrt_w: Vec<f64> = active.iter().map(|&v| self.weight(v).sqrt()).collect();
        let mut diag = Vec::with_capacity(active.len());
        let mut offsets = Vec::with_capacity(active.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for (i, &v) in active.iter().enumerate() {
            diag.push(q[v] - g.degree(v) as f64 / (sqrt_w[i] * sqrt_w[i]));
            for &u in g.neighbors(v) {
                let j = pos[u];
                if j != NONE {
                    cols.push(j);
                    vals.push(1.0 / (sqrt_w[i] * sqrt_w[j]));
                }
            }
            offsets.push(cols.len());
        }
        Ok(SymOperator { active, sqrt_w, diag, offsets, cols, vals })
    }
}

/// Sparse symmetric matrix `W^{1/2} H W^{-1/2}` on the active window vertices.
#[derive(Debug, Clone)]
pub struct SymOperator {
    /// Graph labels of the rows.
    pub active: Vec<usize>,
    pub sqrt_w: Vec<f64>,
    pub diag: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymOperator {
    pub fn dim(&self) -> usize {
        self.active.len()
    }

    /// `y = S x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.dim() {
            let mut acc = self.diag[i] * x[i];
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    /// Off-diagonal entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.offsets[i]..self.offsets[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Upper bound on the spectral radius (maximal absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.diag[i].abs() + self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Dense matrix of `H` on the active window vertices (rows and columns in
/// increasing label order), together with those labels.
pub fn hamiltonian_matrix(window: &DirichletWindow, q: &[f64]) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let op = window.operator(q)?;
    if op.dim() == 0 {
        return Err(invalid("every window vertex was deleted"));
    }
    let mut m = op.to_dense();
    let n = op.dim();
    for i in 0..n {
        for j in 0..n {
            // H = W^{-1/2} S W^{1/2}
            m[(i, j)] *= op.sqrt_w[j] / op.sqrt_w[i];
        }
    }
    Ok((op.active, m))
}

/// Solver settings for eigenproblems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Dense solver up to this dimension, restarted Lanczos above.
    pub dense_max: usize,
    /// Residual tolerance relative to `max(1, |lambda|)`.
    pub tol: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { dense_max: 2000, tol: 1e-12, krylov_dim: 40, max_restarts: 500 }
    }
}

/// Principal eigenvalue and non-negative eigenfunction, `sum w phi^2 = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Eigenpair {
    pub lambda: f64,
    /// Aligned with the window vertices; zero on deleted vertices.
    pub phi: Vec<f64>,
}

/// Complete eigensystem, eigenvalues in decreasing order.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Graph labels of the rows of `vectors`.
    pub vertices: Vec<usize>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    /// Column `k` is `phi^(k)`.
    pub vectors: DMatrix<f64>,
}

pub fn principal_eigenpair(window: &DirichletWindow, q: &[f64]) -> Result<Eigenpair> {
    principal_eigenpair_with(window, q, &EigenOptions::default(), None)
}

/// Principal eigenpair with explicit options and an optional warm start
/// (aligned with the window vertices) for the iterative solver.
pub fn principal_eigenpair_with(
    window: &DirichletWindow,
    q: &[f64],
    opts: &EigenOptions,
    warm: Option<&[f64]>,
) -> Result<Eigenpair> {
    let op = window.operator(q)?;
    let n = op.dim();
    if n == 0 {
        return Err(invalid("every window vertex was deleted"));
    }
    let (lambda, psi) = if n <= opts.dense_max {
        let eig = SymmetricEigen::new(op.to_dense());
        let (k, &lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        (lambda, eig.eigenvectors.column(k).iter().copied().collect::<Vec<f64>>())
    } else {
        let start: Vec<f64> = match warm {
            Some(w) => op
                .active
                .iter()
                .zip(&op.sqrt_w)
                .map(|(&v, s)| w[window.index_of(v).unwrap()].abs() * s + 1e-12)
                .collect(),
            None => vec![1.0; n],
        };
        lanczos_top(&op, start, opts)?
    };
    let mut phi = vec![0.0; window.len()];
    for (i, &v) in op.active.iter().enumerate() {
        phi[window.index_of(v).unwrap()] = psi[i].abs() / op.sqrt_w[i];
    }
    Ok(Eigenpair { lambda, phi })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Largest eigenpair by explicitly restarted Lanczos with full reorthogonalisation.
fn lanczos_top(op: &SymOperator, mut start: Vec<f64>, opts: &EigenOptions) -> Result<(f64, Vec<f64>)> {
    let n = op.dim();
    let m = opts.krylov_dim.clamp(2, n);
    if normalize(&mut start) == 0.0 {
        start = vec![1.0 / (n as f64).sqrt(); n];
    }
    let mut last = (f64::NAN, f64::INFINITY);
    for _ in 0..opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut w = vec![0.0; n];
        let mut tail = 0.0;
        for j in 0..m {
            op.apply(&basis[j], &mut w);
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&w, b);
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = normalize(&mut w);
            tail = b;
            if j + 1 == m || b <= 1e-14 * a.abs().max(1.0) {
                break;
            }
            beta.push(b);
            basis.push(w.clone());
        }
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (idx, &theta) =
            eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let s = eig.eigenvectors.column(idx);
        let mut y = vec![0.0; n];
        for (i, b) in basis.iter().enumerate() {
            y.iter_mut().zip(b).for_each(|(acc, x)| *acc += s[i] * x);
        }
        normalize(&mut y);
        let residual = (tail * s[k - 1]).abs();
        last = (theta, residual);
        if residual <= opts.tol * theta.abs().max(1.0) {
            return Ok((theta, y));
        }
        start = y;
    }
    Err(Error::NoConvergence(format!(
        "Lanczos: lambda {} residual {} after {} restarts",
        last.0, last.1, opts.max_restarts
    )))
}

/// Complete eigensystem by the dense solver; `phi^(1) >= 0`, other vectors
/// have their first entry above `1e-12` (in absolute value) positive.
pub fn full_spectrum(window: &DirichletWindow, q: &[f64]) -> Result<EigenSystem> {
    full_spectrum_with(window, q, &EigenOptions::default())
}

pub fn full_spectrum_with(window: &DirichletWindow, q: &[f64], opts: &EigenOptions) -> Result<EigenSystem> {
    let op = window.operator(q)?;
    let n = op.dim();
    if n == 0 {
        return Err(invalid("every window vertex was deleted"));
    }
    if n > opts.dense_max {
        return Err(invalid(format!("window of size {n} exceeds dense bound {}", opts.dense_max)));
    }
    let eig = SymmetricEigen::new(op.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &c) in order.iter().enumerate() {
        values.push(eig.eigenvalues[c]);
        let col = eig.eigenvectors.column(c);
        let scale = col.amax();
        let sign = if k == 0 {
            if col.sum() < 0.0 { -1.0 } else { 1.0 }
        } else {
            col.iter().find(|x| x.abs() > 1e-12 * scale).map_or(1.0, |x| x.signum())
        };
        for i in 0..n {
            let mut x = sign * col[i] / op.sqrt_w[i];
            if k == 0 {
                x = x.abs();
            }
            vectors[(i, k)] = x;
        }
    }
    let weights = op.sqrt_w.iter().map(|s| s * s).collect();
    Ok(EigenSystem { vertices: op.active, weights, values, vectors })
}

impl EigenSystem {
    fn row_of(&self, v: usize) -> Option<usize> {
        self.vertices.iter().position(|&x| x == v)
    }

    /// `u^y(x, t) = sum_k e^{t lambda_k} phi_k(y) phi_k(x) w(x)` for every
    /// active vertex `x` (aligned with `self.vertices`).
    pub fn kernel_row(&self, y: usize, t: f64) -> Result<Vec<f64>> {
        let iy = self.row_of(y).ok_or_else(|| invalid(format!("vertex {y} not in window")))?;
        let n = self.vertices.len();
        let lead = self.values[0];
        let coeff: Vec<f64> = (0..n)
            .map(|k| (t * (self.values[k] - lead)).exp() * self.vectors[(iy, k)])
            .collect();
        let scale = (t * lead).exp();
        Ok((0..n)
            .map(|i| {
                let s: f64 = (0..n).map(|k| coeff[k] * self.vectors[(i, k)]).sum();
                scale * s * self.weights[i]
            })
            .collect())
    }
}

/// Feynman-Kac kernel `x -> u^y(x, t) = E_y[exp(int_0^t q(X_s) ds) 1{X_t = x, t < tau}]`,
/// aligned with the window vertices.
pub fn evolve_spectral(window: &DirichletWindow, q: &[f64], y: usize, t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(invalid("t must be non-negative"));
    }
    let sys = full_spectrum(window, q)?;
    let row = sys.kernel_row(y, t)?;
    let mut out = vec![0.0; window.len()];
    for (i, &v) in sys.vertices.iter().enumerate() {
        out[window.index_of(v).unwrap()] = row[i];
    }
    Ok(out)
}

/// The other convention, `x -> u^x(y, t) = E_x[... 1{X_t = y}]`. By
/// reversibility it equals `u^y(x, t) w(y) / w(x)`.
pub fn evolve_spectral_to_target(
    window: &DirichletWindow,
    q: &[f64],
    y: usize,
    t: f64,
) -> Result<Vec<f64>> {
    let row = evolve_spectral(window, q, y, t)?;
    let wy = window.weight(y);
    Ok(window.vertices().iter().zip(row).map(|(&x, u)| u * wy / window.weight(x)).collect())
}

/// Witnesses of the spectral sandwich for nested windows `G` inside `L`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    /// `max_G q - 1`.
    pub lower: f64,
    pub lambda_inner: f64,
    pub lambda: f64,
    /// `max_L q`.
    pub upper: f64,
    pub pass: bool,
}

/// Checks `max_G q - 1 <= lambda_G <= lambda_L <= max_L q` with tolerance `tol`.
pub fn spectral_bounds_check(
    window: &DirichletWindow,
    inner: &[usize],
    q: &[f64],
    tol: f64,
) -> Result<BoundsReport> {
    let sub = window.restrict(inner)?;
    let lambda_inner = principal_eigenpair(&sub, q)?.lambda;
    let lambda = principal_eigenpair(window, q)?.lambda;
    let lower = inner.iter().map(|&v| q[v]).fold(f64::NEG_INFINITY, f64::max) - 1.0;
    let upper = window.vertices().iter().map(|&v| q[v]).fold(f64::NEG_INFINITY, f64::max);
    let slack = tol * upper.abs().max(1.0);
    let pass = lower <= lambda_inner + slack && lambda_inner <= lambda + slack && lambda <= upper + slack;
    Ok(BoundsReport { lower, lambda_inner, lambda, upper, pass })
}

/// Exit-time mass `u(x) = E_x[exp(int_0^tau (xi - gamma))]` and its bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitReport {
    /// Aligned with the window vertices.
    pub u: Vec<f64>,
    pub max_u: f64,
    pub lambda: f64,
    /// `1 + |L| / (gamma - lambda)`.
    pub bound: f64,
    pub pass: bool,
}

/// Solves `(H - gamma) u = 0` on the window with `u = 1` outside and checks
/// `u <= 1 + |L| / (gamma - lambda_L)`.
pub fn resolvent_exit_bound(window: &DirichletWindow, xi: &[f64], gamma: f64) -> Result<ExitReport> {
    let lambda = principal_eigenpair(window, xi)?.lambda;
    if !(gamma > lambda) {
        return Err(Error::Domain(format!("gamma {gamma} must exceed lambda {lambda}")));
    }
    let op = window.operator(xi)?;
    let g = window.graph();
    let n = op.dim();
    // symmetric system (gamma - S) v = W^{-1/2} b', b'(x) = #outside neighbours, u = W^{-1/2} v
    let rhs: Vec<f64> = op
        .active
        .iter()
        .zip(&op.sqrt_w)
        .map(|(&v, s)| g.neighbors(v).iter().filter(|&&u| !window.contains(u)).count() as f64 / s)
        .collect();
    let v = if n <= 2000 {
        let mut a = op.to_dense();
        a.neg_mut();
        for i in 0..n {
            a[(i, i)] += gamma;
        }
        let chol = a.cholesky().ok_or_else(|| Error::Domain("shifted operator not positive".into()))?;
        chol.solve(&DVector::from_vec(rhs)).iter().copied().collect::<Vec<f64>>()
    } else {
        conjugate_gradient(&op, gamma, &rhs, 1e-13)?
    };
    let mut u = vec![0.0; window.len()];
    for (i, &x) in op.active.iter().enumerate() {
        u[window.index_of(x).unwrap()] = v[i] / op.sqrt_w[i];
    }
    let max_u = u.iter().copied().fold(0.0, f64::max);
    let bound = 1.0 + window.len() as f64 / (gamma - lambda);
    Ok(ExitReport { u, max_u, lambda, bound, pass: max_u <= bound * (1.0 + 1e-12) })
}

/// Solves `(gamma - S) x = b` for positive definite `gamma - S`.
fn conjugate_gradient(op: &SymOperator, gamma: f64, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = op.dim();
    let apply = |x: &[f64], y: &mut [f64]| {
        op.apply(x, y);
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi = gamma * xi - *yi);
    };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = dot(b, b).sqrt().max(1e-300);
    let mut rr = dot(&r, &r);
    for _ in 0..10 * n + 100 {
        if rr.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, a)| *ri -= alpha * a);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
    Err(Error::NoConvergence("conjugate gradient".into()))
}

/// Witnesses of `e^{t lambda} phi(y)^2 <= u^y(y, t) <= U^y(t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
    pub pass: bool,
}

pub fn solution_sandwich_check(window: &DirichletWindow, xi: &[f64], y: usize, t: f64) -> Result<SandwichReport> {
    let sys = full_spectrum(window, xi)?;
    let iy = window.index_of(y).ok_or_else(|| invalid(format!("vertex {y} not in window")))?;
    let row = evolve_spectral(window, xi, y, t)?;
    let phi_y = sys.vectors[(sys.row_of(y).ok_or_else(|| invalid("vertex deleted"))?, 0)];
    let lower = (t * sys.values[0]).exp() * phi_y * phi_y;
    let mid = row[iy];
    let upper: f64 = row.iter().sum();
    let tol = 1e-10 * upper.abs().max(1e-300);
    Ok(SandwichReport { lower, mid, upper, pass: lower <= mid + tol && mid <= upper + tol })
}

/// Principal eigenvalues of every island (Dirichlet boundary, degree weights).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IslandScan {
    pub lambdas: Vec<f64>,
    /// `-inf` without islands.
    pub max: f64,
}

pub fn island_eigenvalue_scan(g: &RootedGraph, islands: &IslandSystem, xi: &PotentialField) -> Result<IslandScan> {
    let mut lambdas = Vec::with_capacity(islands.islands.len());
    for island in &islands.islands {
        let w = DirichletWindow::new(g, &island.vertices)?;
        lambdas.push(principal_eigenpair(&w, &xi.values)?.lambda);
    }
    let max = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(IslandScan { lambdas, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{regular_tree, RootedGraph};

    fn k2() -> RootedGraph {
        RootedGraph::from_edges(2, &[(0, 1)], 0).unwrap()
    }

    #[test]
    fn k2_matrices() {
        let g = k2();
        let w = DirichletWindow::whole(&g);
        let (_, m) = hamiltonian_matrix(&w, &[0.0, 0.0]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let one = DirichletWindow::new(&g, &[0]).unwrap();
        let (_, m1) = hamiltonian_matrix(&one, &[0.0, 0.0]).unwrap();
        assert_eq!(m1[(0, 0)], -1.0);
    }

    #[test]
    fn star_rows() {
        let g = RootedGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], 0).unwrap();
        let (_, m) = hamiltonian_matrix(&DirichletWindow::whole(&g), &[0.0; 4]).unwrap();
        for j in 1..4 {
            assert!((m[(0, j)] - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(m[(j, 0)], 1.0);
        }
    }

    #[test]
    fn single_vertex_window() {
        let g = regular_tree(3, 2).unwrap();
        let w = DirichletWindow::new(&g, &[2]).unwrap();
        let mut q = vec![0.0; g.n()];
        q[2] = 1.7;
        let e = principal_eigenpair(&w, &q).unwrap();
        assert!((e.lambda - 0.7).abs() < 1e-14);
        assert!((e.phi[0] - 1.0 / 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn k2_spectrum_and_kernel() {
        let g = k2();
        let w = DirichletWindow::whole(&g);
        let sys = full_spectrum(&w, &[0.0, 0.0]).unwrap();
        assert!((sys.values[0]).abs() < 1e-14 && (sys.values[1] + 2.0).abs() < 1e-14);
        assert!((sys.vectors[(0, 0)] - 0.5f64.sqrt()).abs() < 1e-14);
        for t in [0.0, 0.3, 2.0] {
            let u = evolve_spectral(&w, &[0.0, 0.0], 0, t).unwrap();
            assert!((u[0] - (1.0 + (-2.0 * t).exp()) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_at_zero_is_delta() {
        let g = RootedGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], 0).unwrap();
        let w = DirichletWindow::whole(&g);
        let u = evolve_spectral(&w, &[0.3, 1.0, 0.0, 2.0], 2, 0.0).unwrap();
        for (i, x) in u.iter().enumerate() {
            assert!((x - if i == 2 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn removal_by_minus_infinity() {
        let g = regular_tree(2, 1).unwrap(); // path 1-0-2
        let w = DirichletWindow::whole(&g);
        let q = [f64::NEG_INFINITY, 0.5, 0.0];
        let e = principal_eigenpair(&w, &q).unwrap();
        assert!((e.lambda - (0.5 - 1.0)).abs() < 1e-14);
        assert_eq!(e.phi[0], 0.0);
    }

    #[test]
    fn lanczos_matches_dense() {
        let g = regular_tree(3, 6).unwrap();
        let w = DirichletWindow::whole(&g);
        let q: Vec<f64> = (0..g.n()).map(|i| ((i * 7919) % 13) as f64 * 0.3).collect();
        let dense = principal_eigenpair(&w, &q).unwrap();
        let opts = EigenOptions { dense_max: 10, ..Default::default() };
        let it = principal_eigenpair_with(&w, &q, &opts, None).unwrap();
        assert!((dense.lambda - it.lambda).abs() < 1e-10);
        let diff: f64 = dense.phi.iter().zip(&it.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn exit_mass_single_vertex() {
        let g = regular_tree(3, 2).unwrap();
        let w = DirichletWindow::new(&g, &[1]).unwrap();
        let mut xi = vec![0.0; g.n()];
        xi[1] = 0.8;
        let rep = resolvent_exit_bound(&w, &xi, 2.0).unwrap();
        assert!((rep.u[0] - 1.0 / (1.0 + 2.0 - 0.8)).abs() < 1e-14);
        assert!(rep.pass);
        assert!(resolvent_exit_bound(&w, &xi, -0.5).is_err());
    }

    #[test]
    fn empty_island_scan() {
        let g = regular_tree(3, 3).unwrap();
        let xi = PotentialField::prescribed(vec![0.0; g.n()], 1.0).unwrap();
        let sys = crate::potential::build_islands(&g, &xi, 3, 0.1, 0.5).unwrap();
        let scan = island_eigenvalue_scan(&g, &sys, &xi).unwrap();
        assert_eq!(scan.max, f64::NEG_INFINITY);
    }
}
