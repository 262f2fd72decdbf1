//! The characteristic variational formula and its gluing calculus.
//!
//! For a window `L` of a graph with vertex weights `w` (degrees by default)
//! and a probability vector `p` on `L`,
//!
//! ```text
//! I(p) = sum_{ {x,y} in E } ( sqrt(p(x)/w(x)) - sqrt(p(y)/w(y)) )^2     (p = 0 off L)
//! J(p) = - sum_x p(x) log p(x)
//! chi_L(rho) = inf_p [ I(p) + rho J(p) ]
//! ```
//!
//! In the coordinates `psi = sqrt(p)` the energy is `-<psi, S0 psi>` with `S0`
//! the symmetrised Laplacian of the window, so `psi` lives on the unit sphere.
//! Stationary points are principal eigenvectors of `S0 + rho log p`, which is
//! the fixed-point equation used by the dual solver.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Dirichlet, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::graph::{self, RootedGraph};
use crate::rng;
use crate::spectral::{principal_eigenpair_with, DirichletWindow, EigenOptions, SymOperator, Weighting};
use crate::{Error, Result};

const SUM_TOL: f64 = 1e-12;
const TINY: f64 = 1e-150;

/// A probability vector on a vertex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    p: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("probabilities sum to {s}")));
        }
        Ok(Self { p })
    }

    /// Rescales non-negative masses to total one.
    pub fn normalized(mut p: Vec<f64>) -> Result<Self> {
        let s: f64 = p.iter().sum();
        if !(s > 0.0) || !s.is_finite() || p.iter().any(|&x| x < 0.0) {
            return Err(invalid("cannot normalise these masses"));
        }
        p.iter_mut().for_each(|x| *x /= s);
        Ok(Self { p })
    }

    pub fn point_mass(n: usize, x: usize) -> Result<Self> {
        if x >= n {
            return Err(Error::VertexOutOfRange { vertex: x, n });
        }
        let mut p = vec![0.0; n];
        p[x] = 1.0;
        Ok(Self { p })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.p.len()).filter(|&i| self.p[i] > 0.0).collect()
    }
}

/// A potential profile `q` with values in `[-inf, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialProfile {
    pub q: Vec<f64>,
}

impl PotentialProfile {
    /// The stationary profile `rho log p`.
    pub fn from_probability(p: &[f64], rho: f64) -> Self {
        Self { q: p.iter().map(|&x| rho * x.ln()).collect() }
    }

    /// `sum_x exp(q(x)/rho)`.
    pub fn l_value(&self, rho: f64) -> f64 {
        self.q.iter().map(|&x| (x / rho).exp()).sum()
    }

    pub fn is_feasible(&self, rho: f64) -> bool {
        self.l_value(rho) <= 1.0 + SUM_TOL
    }
}

/// Energy `I` with degree weights on the whole graph; `p` indexed by vertex.
pub fn dirichlet_energy(g: &RootedGraph, p: &[f64]) -> f64 {
    window_energy(&DirichletWindow::whole(g), p)
}

/// Energy `I` of `p` (aligned with the window vertices) on a window; edges
/// leaving the window contribute `p(x)/w(x)`.
pub fn window_energy(window: &DirichletWindow, p: &[f64]) -> f64 {
    let g = window.graph();
    let mut total = 0.0;
    for (i, &v) in window.vertices().iter().enumerate() {
        let a = (p[i] / window.weight(v)).sqrt();
        for &u in g.neighbors(v) {
            match window.index_of(u) {
                Some(j) if u > v => {
                    let b = (p[j] / window.weight(u)).sqrt();
                    total += (a - b) * (a - b);
                }
                Some(_) => {}
                None => total += a * a,
            }
        }
    }
    total
}

/// Entropy `-sum p log p` with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `I(p) + rho J(p)` on a window.
pub fn functional(window: &DirichletWindow, p: &[f64], rho: f64) -> f64 {
    window_energy(window, p) + rho * entropy(p)
}

/// Solver record attached to every value of chi.
#[derive(Debug, Clone, Serialize)]
pub struct SolverTrace {
    pub method: String,
    pub iterations: usize,
    pub restarts: usize,
    /// Dual: `-lambda - (I + rho J)` at the returned point; direct: zero.
    pub gap: f64,
    /// Norm of the projected gradient (direct) or final gap (dual).
    pub stationarity: f64,
    pub converged: bool,
}

/// Value of chi with its minimiser.
#[derive(Debug, Clone, Serialize)]
pub struct ChiResult {
    pub value: f64,
    /// Graph labels the entries of `p` and `q` refer to.
    pub vertices: Vec<usize>,
    pub p: Vec<f64>,
    /// `rho log p`; `-inf` (serialised as null) where `p` vanishes.
    pub q: Vec<f64>,
    pub trace: SolverTrace,
}

/// Settings of the direct solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiOptions {
    /// Random restarts drawn from the flat Dirichlet law.
    pub restarts: usize,
    pub seed: u64,
    /// Target norm of the projected gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Newton polish when the number of free coordinates is at most this.
    pub newton_max: usize,
    /// Starts peaked at every vertex for windows up to this size ...
    pub peak_max: usize,
    /// ... and at this many vertices beyond it.
    pub peak_count: usize,
}

impl Default for ChiOptions {
    fn default() -> Self {
        Self { restarts: 8, seed: 0, tol: 1e-10, max_iter: 50_000, newton_max: 400, peak_max: 64, peak_count: 16 }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(invalid(format!("rho must be positive and finite, got {rho}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Local {
    psi: Vec<f64>,
    value: f64,
    grad_norm: f64,
    iterations: usize,
}

/// Minimisation of `-<psi, S0 psi> - rho sum psi^2 log psi^2` on a sphere,
/// optionally with one coordinate frozen.
struct Problem {
    op: SymOperator,
    rho: f64,
    fixed: Option<(usize, f64)>,
    radius2: f64,
}

impl Problem {
    fn new(window: &DirichletWindow, rho: f64, fixed: Option<(usize, f64)>) -> Result<Self> {
        let zeros = vec![0.0; window.graph().n()];
        let op = window.operator(&zeros)?;
        let radius2 = fixed.map_or(1.0, |(_, b)| 1.0 - b);
        Ok(Self { op, rho, fixed: fixed.map(|(i, b)| (i, b.sqrt())), radius2 })
    }

    fn n(&self) -> usize {
        self.op.dim()
    }

    fn is_free(&self, i: usize) -> bool {
        self.fixed.map_or(true, |(f, _)| f != i)
    }

    fn value(&self, psi: &[f64]) -> f64 {
        let mut s = vec![0.0; self.n()];
        self.op.apply(psi, &mut s);
        let ent: f64 =
            psi.iter().filter(|&&x| x > 0.0).map(|&x| -x * x * (x * x).ln()).sum();
        -dot(psi, &s) + self.rho * ent
    }

    fn grad(&self, psi: &[f64], out: &mut [f64]) {
        self.op.apply(psi, out);
        for i in 0..psi.len() {
            let x = psi[i];
            let ent = if x > 0.0 { x * ((x * x).ln() + 1.0) } else { 0.0 };
            out[i] = -2.0 * (out[i] + self.rho * ent);
            if !self.is_free(i) {
                out[i] = 0.0;
            }
        }
    }

    /// Projects the gradient onto the tangent space of the free sphere.
    fn tangent(&self, psi: &[f64], g: &mut [f64]) -> f64 {
        let mu = dot(psi, g) / self.radius2;
        for i in 0..psi.len() {
            if self.is_free(i) {
                g[i] -= mu * psi[i];
            }
        }
        mu
    }

    /// Maps any vector to the constraint set with non-negative entries.
    fn retract(&self, v: &mut [f64]) {
        let mut s = 0.0;
        for i in 0..v.len() {
            if self.is_free(i) {
                v[i] = v[i].abs();
                if v[i] < TINY {
                    v[i] = 0.0;
                }
                s += v[i] * v[i];
            }
        }
        let scale = if s > 0.0 { (self.radius2 / s).sqrt() } else { 0.0 };
        for i in 0..v.len() {
            if self.is_free(i) {
                v[i] *= scale;
            }
        }
        if let Some((f, b)) = self.fixed {
            v[f] = b;
        }
    }

    fn solve_from(&self, start: &[f64], opts: &ChiOptions) -> Local {
        let n = self.n();
        let mut psi: Vec<f64> = start.iter().map(|&p| p.max(0.0).sqrt()).collect();
        self.retract(&mut psi);
        let free_count = (0..n).filter(|&i| self.is_free(i)).count();
        if self.radius2 <= 0.0 || free_count <= 1 {
            // the constraint set is a single point
            if free_count == 1 && self.radius2 > 0.0 {
                let i = (0..n).find(|&i| self.is_free(i)).unwrap();
                psi[i] = self.radius2.sqrt();
            }
            let value = self.value(&psi);
            return Local { psi, value, grad_norm: 0.0, iterations: 0 };
        }
        let mut f = self.value(&psi);
        let mut g = vec![0.0; n];
        self.grad(&psi, &mut g);
        self.tangent(&psi, &mut g);
        let mut alpha = 1.0 / self.op.norm_bound().max(self.rho).max(1.0);
        let mut cand = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let gn2 = dot(&g, &g);
            if gn2.sqrt() <= opts.tol {
                break;
            }
            let mut step = alpha;
            let mut fc;
            loop {
                for i in 0..n {
                    cand[i] = psi[i] - step * g[i];
                }
                self.retract(&mut cand);
                fc = self.value(&cand);
                if fc <= f - 1e-4 * step * gn2 || step < 1e-16 {
                    break;
                }
                step *= 0.5;
            }
            if !(fc < f) {
                break;
            }
            iterations += 1;
            self.grad(&cand, &mut g_new);
            self.tangent(&cand, &mut g_new);
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..n {
                let s = cand[i] - psi[i];
                ss += s * s;
                sy += s * (g_new[i] - g[i]);
            }
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e6) } else { (2.0 * step).min(1e6) };
            std::mem::swap(&mut psi, &mut cand);
            std::mem::swap(&mut g, &mut g_new);
            f = fc;
        }
        if free_count <= opts.newton_max {
            iterations += self.newton(&mut psi, &mut f, 60);
        }
        self.grad(&psi, &mut g);
        self.tangent(&psi, &mut g);
        Local { grad_norm: dot(&g, &g).sqrt(), psi, value: f, iterations }
    }

    /// Newton steps on the sphere through the bordered KKT system.
    fn newton(&self, psi: &mut Vec<f64>, f: &mut f64, max_steps: usize) -> usize {
        let n = self.n();
        let dense = self.op.to_dense();
        let mut g = vec![0.0; n];
        let mut steps = 0;
        for _ in 0..max_steps {
            let free: Vec<usize> = (0..n).filter(|&i| self.is_free(i) && psi[i] > 0.0).collect();
            let m = free.len();
            if m < 2 {
                break;
            }
            self.grad(psi, &mut g);
            let mu = self.tangent(psi, &mut g);
            let gn = dot(&g, &g).sqrt();
            if gn <= 1e-15 {
                break;
            }
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    a[(r, c)] = -2.0 * dense[(i, j)];
                }
                a[(r, r)] += -2.0 * self.rho * ((psi[i] * psi[i]).ln() + 3.0) - mu;
                a[(r, m)] = psi[i];
                a[(m, r)] = psi[i];
                rhs[r] = -g[i];
            }
            let Some(sol) = a.lu().solve(&rhs) else { break };
            let mut accepted = false;
            let mut t = 1.0;
            for _ in 0..8 {
                let mut cand = psi.clone();
                for (r, &i) in free.iter().enumerate() {
                    cand[i] += t * sol[r];
                }
                self.retract(&mut cand);
                let fc = self.value(&cand);
                let mut gc = vec![0.0; n];
                self.grad(&cand, &mut gc);
                self.tangent(&cand, &mut gc);
                let gcn = dot(&gc, &gc).sqrt();
                if fc <= *f + 1e-14 * f.abs().max(1.0) && gcn < gn {
                    *psi = cand;
                    *f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            steps += 1;
        }
        steps
    }
}

fn start_points(window: &DirichletWindow, opts: &ChiOptions, fixed: Option<usize>) -> Vec<Vec<f64>> {
    let n = window.len();
    let w: Vec<f64> = window.vertices().iter().map(|&v| window.weight(v)).collect();
    let total: f64 = w.iter().sum();
    let flat: Vec<f64> = w.iter().map(|x| x / total).collect();
    let mut starts = vec![flat.clone()];
    if n > 1 {
        let mut peaks: Vec<usize> = (0..n).filter(|&i| Some(i) != fixed).collect();
        if peaks.len() > opts.peak_max {
            let g = window.graph();
            let root_dist = g.bfs_distances(g.root());
            peaks.sort_by(|&a, &b| {
                w[a].total_cmp(&w[b]).then(root_dist[window.vertices()[a]].cmp(&root_dist[window.vertices()[b]]))
            });
            peaks.truncate(opts.peak_count);
        }
        for &i in &peaks {
            let mut p: Vec<f64> = flat.iter().map(|x| 0.1 * x).collect();
            p[i] += 0.9;
            starts.push(p);
        }
        let alpha = vec![1.0; n];
        let dirichlet = Dirichlet::new(&alpha).expect("n >= 2");
        for j in 0..opts.restarts {
            let mut r = rng::stream(rng::child_seed(opts.seed, j as u64), 2);
            starts.push(dirichlet.sample(&mut r));
        }
    }
    starts
}

/// Deterministic choice among candidates: lowest value, then highest
/// entropy, then lexicographically smallest `p` (ties at `1e-12` / `1e-9`).
fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    let tie = 1e-12 * a.0.abs().max(b.0.abs()).max(1.0);
    if a.0 < b.0 - tie {
        return true;
    }
    if a.0 > b.0 + tie {
        return false;
    }
    let (ha, hb) = (entropy(a.1), entropy(b.1));
    if (ha - hb).abs() > 1e-9 {
        return ha > hb;
    }
    for (x, y) in a.1.iter().zip(b.1) {
        if (x - y).abs() > 1e-9 {
            return x < y;
        }
    }
    false
}

fn finish(
    window: &DirichletWindow,
    rho: f64,
    p: Vec<f64>,
    method: &str,
    iterations: usize,
    restarts: usize,
    stationarity: f64,
    converged: bool,
) -> ChiResult {
    let value = functional(window, &p, rho);
    let q = PotentialProfile::from_probability(&p, rho).q;
    ChiResult {
        value,
        vertices: window.vertices().to_vec(),
        p,
        q,
        trace: SolverTrace { method: method.into(), iterations, restarts, gap: 0.0, stationarity, converged },
    }
}

fn direct(
    window: &DirichletWindow,
    rho: f64,
    opts: &ChiOptions,
    fixed: Option<(usize, f64)>,
    extra: &[Vec<f64>],
) -> Result<ChiResult> {
    check_rho(rho)?;
    let problem = Problem::new(window, rho, fixed)?;
    let mut starts = start_points(window, opts, fixed.map(|f| f.0));
    for p in extra {
        if p.len() != window.len() {
            return Err(invalid("start vector does not match the window"));
        }
        starts.push(p.clone());
    }
    let locals: Vec<Local> = starts.par_iter().map(|s| problem.solve_from(s, opts)).collect();
    let candidates: Vec<Vec<f64>> = locals
        .iter()
        .map(|l| {
            let mut p: Vec<f64> = l.psi.iter().map(|x| x * x).collect();
            if let Some((i, b)) = fixed {
                p[i] = b;
            }
            p
        })
        .collect();
    let mut best = 0;
    for k in 1..locals.len() {
        if better((locals[k].value, &candidates[k]), (locals[best].value, &candidates[best])) {
            best = k;
        }
    }
    let iterations = locals.iter().map(|l| l.iterations).sum();
    let l = &locals[best];
    Ok(finish(
        window,
        rho,
        candidates[best].clone(),
        "direct",
        iterations,
        starts.len(),
        l.grad_norm,
        l.grad_norm <= opts.tol.max(1e-8),
    ))
}

/// `chi_G(rho)` on a whole graph by multi-start projected gradient.
pub fn chi_direct(g: &RootedGraph, rho: f64, restarts: usize, tol: f64) -> Result<ChiResult> {
    let opts = ChiOptions { restarts, tol, ..Default::default() };
    chi_window(&DirichletWindow::whole(g), rho, &opts)
}

/// Dirichlet version on a window: `p` supported on the window, edges to the
/// outside penalised.
pub fn chi_window(window: &DirichletWindow, rho: f64, opts: &ChiOptions) -> Result<ChiResult> {
    direct(window, rho, opts, None, &[])
}

/// As [`chi_window`], with additional starting vectors; the result is never
/// worse than the objective at any of them.
pub fn chi_window_from(
    window: &DirichletWindow,
    rho: f64,
    opts: &ChiOptions,
    starts: &[Vec<f64>],
) -> Result<ChiResult> {
    direct(window, rho, opts, None, starts)
}

/// `inf { I(p) + rho J(p) : p(x) = b }` on a window.
pub fn chi_boundary_window(
    window: &DirichletWindow,
    x: usize,
    b: f64,
    rho: f64,
    opts: &ChiOptions,
) -> Result<ChiResult> {
    if !(0.0..=1.0).contains(&b) {
        return Err(invalid(format!("boundary value {b} outside [0, 1]")));
    }
    let i = window.index_of(x).ok_or_else(|| invalid(format!("vertex {x} not in window")))?;
    if window.len() == 1 && b < 1.0 {
        return Err(Error::Domain("a single vertex carries all the mass".into()));
    }
    direct(window, rho, opts, Some((i, b)), &[])
}

/// `chi_G^{(x,b)}(rho)` on a whole graph.
pub fn chi_boundary(g: &RootedGraph, x: usize, b: f64, rho: f64) -> Result<f64> {
    g.check_vertex(x)?;
    Ok(chi_boundary_window(&DirichletWindow::whole(g), x, b, rho, &ChiOptions::default())?.value)
}

/// Settings of the dual fixed-point solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualOptions {
    /// Damping in `q <- (1 - eta) q + eta rho log p`.
    pub eta: f64,
    /// Stop when the duality gap falls below `tol * max(1, value)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starts peaked at every vertex for windows up to this size.
    pub peak_max: usize,
    pub eigen: EigenOptions,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self { eta: 0.5, tol: 1e-12, max_iter: 100_000, peak_max: 64, eigen: EigenOptions::default() }
    }
}

struct DualRun {
    upper: f64,
    p: Vec<f64>,
    gap: f64,
    iterations: usize,
}

fn dual_from(window: &DirichletWindow, rho: f64, opts: &DualOptions, p0: &[f64]) -> Result<DualRun> {
    let g = window.graph();
    let mut q = vec![0.0; g.n()];
    for (i, &v) in window.vertices().iter().enumerate() {
        q[v] = rho * p0[i].ln();
    }
    let mut warm: Option<Vec<f64>> = None;
    let mut run = DualRun { upper: f64::INFINITY, p: p0.to_vec(), gap: f64::INFINITY, iterations: 0 };
    for it in 0..opts.max_iter {
        let eig = principal_eigenpair_with(window, &q, &opts.eigen, warm.as_deref())?;
        let p: Vec<f64> = window
            .vertices()
            .iter()
            .zip(&eig.phi)
            .map(|(&v, &phi)| window.weight(v) * phi * phi)
            .collect();
        let upper = -eig.lambda;
        let gap = upper - functional(window, &p, rho);
        run = DualRun { upper, p, gap, iterations: it + 1 };
        if gap.abs() <= opts.tol * upper.abs().max(1.0) {
            break;
        }
        for (i, &v) in window.vertices().iter().enumerate() {
            let target = rho * run.p[i].ln();
            q[v] = if q[v] == f64::NEG_INFINITY || target == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                (1.0 - opts.eta) * q[v] + opts.eta * target
            };
        }
        warm = Some(eig.phi);
    }
    Ok(run)
}

/// `hat chi_L(rho) = -sup { lambda_1(L, q) : sum exp(q/rho) <= 1 }` by damped
/// alternating maximisation started from the flat and vertex-peaked profiles.
pub fn chi_dual_window(window: &DirichletWindow, rho: f64, opts: &DualOptions) -> Result<ChiResult> {
    check_rho(rho)?;
    if !(opts.eta > 0.0 && opts.eta <= 1.0) {
        return Err(invalid("damping must lie in (0, 1]"));
    }
    let chi_opts = ChiOptions { restarts: 0, peak_max: opts.peak_max, ..Default::default() };
    let starts = start_points(window, &chi_opts, None);
    let runs: Vec<DualRun> =
        starts.par_iter().map(|s| dual_from(window, rho, opts, s)).collect::<Result<_>>()?;
    let mut best = 0;
    for k in 1..runs.len() {
        if better((runs[k].upper, &runs[k].p), (runs[best].upper, &runs[best].p)) {
            best = k;
        }
    }
    let run = &runs[best];
    let converged = run.gap.abs() <= opts.tol * run.upper.abs().max(1.0);
    let mut out = finish(
        window,
        rho,
        run.p.clone(),
        "dual",
        runs.iter().map(|r| r.iterations).sum(),
        runs.len(),
        run.gap.abs(),
        converged,
    );
    out.value = run.upper;
    out.trace.gap = run.gap;
    Ok(out)
}

/// Dual solver on the window `lambda` of `g` with degree weights.
pub fn chi_dual_fixed_point(g: &RootedGraph, lambda: &[usize], rho: f64, tol: f64) -> Result<ChiResult> {
    let window = DirichletWindow::new(g, lambda)?;
    chi_dual_window(&window, rho, &DualOptions { tol, ..Default::default() })
}

/// Outcome of comparing a glued graph with its two pieces.
#[derive(Debug, Clone, Serialize)]
pub struct GlueTwoReport {
    pub chi_glued: f64,
    pub chi_first: f64,
    pub chi_second: f64,
    pub min_pieces: f64,
    pub pass: bool,
}

pub const GLUE_TOL: f64 = 1e-6;

/// `chi` of the two-piece gluing against the smaller `chi` of the pieces,
/// each piece with its own degrees.
pub fn glue_two_check(
    g1: &RootedGraph,
    x1: usize,
    g2: &RootedGraph,
    x2: usize,
    rho: f64,
    opts: &ChiOptions,
) -> Result<GlueTwoReport> {
    let glued = graph::glue_two(g1, x1, g2, x2)?;
    let chi_glued = chi_window(&DirichletWindow::whole(&glued), rho, opts)?.value;
    let chi_first = chi_window(&DirichletWindow::whole(g1), rho, opts)?.value;
    let chi_second = chi_window(&DirichletWindow::whole(g2), rho, opts)?.value;
    let min_pieces = chi_first.min(chi_second);
    Ok(GlueTwoReport { chi_glued, chi_first, chi_second, min_pieces, pass: chi_glued >= min_pieces - GLUE_TOL })
}

/// Boundary-conditioned values of one piece of a star gluing, with the
/// degrees the piece has inside the glued graph.
struct PieceTable {
    single: bool,
    deg_y: f64,
    grid: Vec<f64>,
    cache: std::sync::Mutex<std::collections::BTreeMap<u64, f64>>,
    graph: RootedGraph,
    y: usize,
    weights: Vec<f64>,
}

impl PieceTable {
    fn new(g: &RootedGraph, y: usize, rho: f64, n_grid: usize, opts: &ChiOptions) -> Result<Self> {
        let weights: Vec<f64> =
            (0..g.n()).map(|v| (g.degree(v) + usize::from(v == y)) as f64).collect();
        let mut t = Self {
            single: g.n() == 1,
            deg_y: weights[y],
            grid: Vec::new(),
            cache: Default::default(),
            graph: g.clone(),
            y,
            weights,
        };
        if !t.single {
            let rs: Vec<f64> = (0..=n_grid).map(|j| j as f64 / n_grid as f64).collect();
            t.grid = rs.iter().map(|&r| t.exact(r, rho, opts)).collect::<Result<_>>()?;
        }
        Ok(t)
    }

    fn exact(&self, r: f64, rho: f64, opts: &ChiOptions) -> Result<f64> {
        if self.single {
            return Ok(if r == 1.0 { 0.0 } else { f64::INFINITY });
        }
        let key = r.to_bits();
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let w = DirichletWindow::whole(&self.graph).with_weighting(Weighting::Custom(self.weights.clone()))?;
        let v = chi_boundary_window(&w, self.y, r, rho, opts)?.value;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

/// Outcome of the star-gluing identity.
#[derive(Debug, Clone, Serialize)]
pub struct GlueStarReport {
    /// `chi` of the glued graph by the direct solver.
    pub lhs: f64,
    /// Minimum of the decomposed expression over masses and boundary values.
    pub rhs: f64,
    pub gap: f64,
    /// Optimal piece masses `a_i` and boundary masses `c_i`.
    pub masses: Vec<f64>,
    pub boundary: Vec<f64>,
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

impl PieceTable {
    /// `a h(r) + (sqrt(a r / deg y) - sqrt(hub / k))^2` for a given `h(r)`.
    fn term(&self, a: f64, r: f64, h: f64, hub: f64, k: f64) -> f64 {
        let d = (a * r / self.deg_y).sqrt() - (hub / k).sqrt();
        let main = if a > 0.0 { a * h } else { 0.0 };
        main + d * d
    }

    /// Minimum of [`Self::term`] over the boundary fraction `r`, from the
    /// table alone (`exact = false`) or refined by golden section with exact
    /// piece values around the best table entry.
    fn profile(&self, a: f64, hub: f64, k: f64, rho: f64, opts: &ChiOptions, exact: bool) -> Result<(f64, f64)> {
        if self.single || a == 0.0 {
            return Ok((1.0, self.term(a, 1.0, 0.0, hub, k)));
        }
        let m = self.grid.len() - 1;
        let mut best = (0.0, f64::INFINITY, 0);
        for (j, &h) in self.grid.iter().enumerate() {
            let r = j as f64 / m as f64;
            let v = self.term(a, r, h, hub, k);
            if v < best.1 {
                best = (r, v, j);
            }
        }
        if !exact {
            return Ok((best.0, best.1));
        }
        let f = |r: f64| -> Result<f64> { Ok(self.term(a, r, self.exact(r, rho, opts)?, hub, k)) };
        let (mut lo, mut hi) = ((best.2.max(1) - 1) as f64 / m as f64, ((best.2 + 1).min(m)) as f64 / m as f64);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        let (mut f1, mut f2) = (f(x1)?, f(x2)?);
        while hi - lo > 1e-10 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = f(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = f(x2)?;
            }
        }
        let mut out = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        for r in [lo, hi, best.0] {
            let v = f(r)?;
            if v < out.1 {
                out = (r, v);
            }
        }
        Ok(out)
    }
}

/// Decomposed objective at piece masses `a`, boundary fractions profiled out.
fn star_profile(
    tables: &[PieceTable],
    a: &[f64],
    rho: f64,
    opts: &ChiOptions,
    exact: bool,
) -> Result<(f64, Vec<f64>)> {
    let total: f64 = a.iter().sum();
    if total > 1.0 + 1e-15 || a.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Ok((f64::INFINITY, Vec::new()));
    }
    let hub = (1.0 - total).max(0.0);
    let k = tables.len() as f64;
    let mut value = -rho * xlogx(hub);
    let mut rs = Vec::with_capacity(tables.len());
    for (t, &ai) in tables.iter().zip(a) {
        let (r, v) = t.profile(ai, hub, k, rho, opts, exact)?;
        value += v - rho * xlogx(ai);
        rs.push(r);
    }
    Ok((value, rs))
}

/// Evaluates both sides of the star-gluing identity: `chi` of the graph
/// obtained by joining each marked vertex `y_i` to a fresh hub, and the
/// minimum over piece masses `a_i` and boundary masses `c_i` of
///
/// ```text
/// sum a_i (chi_i^{(y_i, c_i/a_i)} - rho log a_i)
///   + sum (sqrt(c_i/deg y_i) - sqrt((1 - sum a)/deg x))^2 - rho h log h,   h = 1 - sum a,
/// ```
///
/// where piece values use the degrees of the glued graph. For fixed masses
/// the boundary fractions separate and are minimised one piece at a time.
/// The masses are searched on the simplex grid of step `1/grid` with
/// tabulated piece values, and the best few grid points are refined by
/// pattern search with exact piece values.
pub fn glue_star_identity(
    pieces: &[(&RootedGraph, usize)],
    rho: f64,
    grid: usize,
    opts: &ChiOptions,
) -> Result<GlueStarReport> {
    check_rho(rho)?;
    let k = pieces.len();
    if k == 0 || k > 3 {
        return Err(invalid("the identity is evaluated for one to three pieces"));
    }
    if grid < 4 {
        return Err(invalid("grid must have at least four cells"));
    }
    let glued = graph::glue_star(pieces)?;
    let lhs = chi_window(&DirichletWindow::whole(&glued), rho, opts)?.value;
    let tables: Vec<PieceTable> =
        pieces.iter().map(|&(g, y)| PieceTable::new(g, y, rho, grid, opts)).collect::<Result<_>>()?;

    let mut coarse: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut idx = vec![0usize; k];
    loop {
        if idx.iter().sum::<usize>() <= grid {
            let a: Vec<f64> = idx.iter().map(|&x| x as f64 / grid as f64).collect();
            coarse.push((star_profile(&tables, &a, rho, opts, false)?.0, a));
        }
        let mut i = 0;
        while i < k {
            idx[i] += 1;
            if idx.iter().sum::<usize>() <= grid {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if i == k {
            break;
        }
    }
    coarse.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut moves: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        for s in [1.0, -1.0] {
            let mut m = vec![0.0; k];
            m[i] = s;
            moves.push(m);
            for j in i + 1..k {
                let mut m = vec![0.0; k];
                m[i] = s;
                m[j] = -s;
                moves.push(m);
            }
        }
    }
    let mut best: (f64, Vec<f64>, Vec<f64>) = (f64::INFINITY, Vec::new(), Vec::new());
    for (_, a0) in coarse.iter().take(4) {
        let mut a = a0.clone();
        let (mut val, mut rs) = star_profile(&tables, &a, rho, opts, true)?;
        let mut step = 1.0 / grid as f64;
        while step > 1e-10 {
            let mut improved = false;
            for m in &moves {
                let cand: Vec<f64> = a.iter().zip(m).map(|(x, d)| (x + step * d).clamp(0.0, 1.0)).collect();
                let (v, r) = star_profile(&tables, &cand, rho, opts, true)?;
                if v < val - 1e-15 {
                    a = cand;
                    val = v;
                    rs = r;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if val < best.0 {
            best = (val, a, rs);
        }
    }
    let (rhs, masses, rs) = best;
    let boundary = masses.iter().zip(&rs).map(|(x, y)| x * y).collect();
    Ok(GlueStarReport { lhs, rhs, gap: (lhs - rhs).abs(), masses, boundary })
}

/// Outcome of the lower-bound propagation check.
#[derive(Debug, Clone, Serialize)]
pub struct PropagationReport {
    pub k: usize,
    pub m: f64,
    pub c: f64,
    pub rho: f64,
    pub hypothesis_met: bool,
    /// Why the hypothesis failed, if it did.
    pub reason: Option<String>,
    /// `min_j chi` of the star with piece `j` removed.
    pub min_reduced: f64,
    /// `min_j inf_v chi_{G_j}^{(y_j, v)} = min_j chi_{G_j}`.
    pub min_piece: f64,
    pub chi_glued: f64,
    /// `chi_glued >= m` (only when the hypothesis holds).
    pub pass: Option<bool>,
}

/// Given `k + 1` pieces with marked vertices, checks the hypotheses
/// `min_j chi(star without j) >= m`, `min_j chi(G_j) >= m - c`,
/// `rho >= c / log(k + 1)` and, if they hold, the conclusion
/// `chi(star of all pieces) >= m`. Pieces carry their own degrees. `m`
/// defaults to the reduced-star minimum and `c` to the smallest admissible value.
pub fn propagation_check(
    pieces: &[(&RootedGraph, usize)],
    rho: f64,
    m: Option<f64>,
    c: Option<f64>,
    opts: &ChiOptions,
) -> Result<PropagationReport> {
    check_rho(rho)?;
    if pieces.len() < 2 {
        return Err(invalid("propagation needs at least two pieces"));
    }
    let k = pieces.len() - 1;
    let chi_of = |g: &RootedGraph| chi_window(&DirichletWindow::whole(g), rho, opts).map(|r| r.value);
    let mut min_reduced = f64::INFINITY;
    for j in 0..=k {
        let rest: Vec<(&RootedGraph, usize)> =
            pieces.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &p)| p).collect();
        min_reduced = min_reduced.min(chi_of(&graph::glue_star(&rest)?)?);
    }
    let mut min_piece = f64::INFINITY;
    for &(g, _) in pieces {
        min_piece = min_piece.min(chi_of(g)?);
    }
    let m = m.unwrap_or(min_reduced);
    let c = c.unwrap_or_else(|| (m - min_piece).max(1e-12));
    let chi_glued = chi_of(&graph::glue_star(pieces)?)?;
    let tol = GLUE_TOL;
    let reason = if !(c > 0.0) {
        Some("C must be positive".to_string())
    } else if min_reduced < m - tol {
        Some(format!("reduced stars reach {min_reduced} < M = {m}"))
    } else if min_piece < m - c - tol {
        Some(format!("pieces reach {min_piece} < M - C = {}", m - c))
    } else if rho < c / ((k + 1) as f64).ln() {
        Some(format!("rho = {rho} < C/log(k+1) = {}", c / ((k + 1) as f64).ln()))
    } else {
        None
    };
    let hypothesis_met = reason.is_none();
    Ok(PropagationReport {
        k,
        m,
        c,
        rho,
        hypothesis_met,
        reason,
        min_reduced,
        min_piece,
        chi_glued,
        pass: hypothesis_met.then_some(chi_glued >= m - tol),
    })
}

/// Outcome of the comparison bound for `k + 1` pieces.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub lhs: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Lower bound for the `(k+1)`-star through the `k`-stars with one piece
/// removed:
///
/// ```text
/// inf_j inf_{u <= 1/(k+1)} { (1-u) chi(star without j)
///     + inf_v [ u chi_j^{(y_j,v)} + 1{u(1+v) >= 1} (sqrt(v u / deg y_j) - sqrt((1-u)/deg x))^2 ]
///     - rho [u log u + (1-u) log(1-u)] }
/// ```
///
/// Reduced stars and pieces carry their own degrees, `deg y_j` and `deg x`
/// are taken in the full star. Grid of `grid` cells in `u` and `v`.
pub fn comparison_check(
    pieces: &[(&RootedGraph, usize)],
    rho: f64,
    grid: usize,
    opts: &ChiOptions,
) -> Result<ComparisonReport> {
    check_rho(rho)?;
    if pieces.len() < 2 {
        return Err(invalid("comparison needs at least two pieces"));
    }
    let k1 = pieces.len();
    let full = graph::glue_star(pieces)?;
    let lhs = chi_window(&DirichletWindow::whole(&full), rho, opts)?.value;
    let deg_x = k1 as f64;
    let mut bound = f64::INFINITY;
    for j in 0..k1 {
        let rest: Vec<(&RootedGraph, usize)> =
            pieces.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &p)| p).collect();
        let reduced = chi_window(&DirichletWindow::whole(&graph::glue_star(&rest)?), rho, opts)?.value;
        let (gj, yj) = pieces[j];
        let deg_y = (gj.degree(yj) + 1) as f64;
        let vs: Vec<f64> = (0..=grid).map(|i| i as f64 / grid as f64).collect();
        let hv: Vec<f64> = vs
            .iter()
            .map(|&v| {
                if gj.n() == 1 {
                    Ok(if v == 1.0 { 0.0 } else { f64::INFINITY })
                } else {
                    chi_boundary_window(&DirichletWindow::whole(gj), yj, v, rho, opts).map(|r| r.value)
                }
            })
            .collect::<Result<_>>()?;
        for i in 0..=grid {
            let u = i as f64 / (grid as f64 * k1 as f64);
            let mut inner = f64::INFINITY;
            for (&v, &h) in vs.iter().zip(&hv) {
                let mut t = u * h;
                if u == 0.0 {
                    t = 0.0;
                }
                if u * (1.0 + v) >= 1.0 {
                    let d = (v * u / deg_y).sqrt() - ((1.0 - u) / deg_x).sqrt();
                    t += d * d;
                }
                inner = inner.min(t);
            }
            let val = (1.0 - u) * reduced + inner - rho * (xlogx(u) + xlogx(1.0 - u));
            bound = bound.min(val);
        }
    }
    Ok(ComparisonReport { lhs, bound, pass: lhs >= bound - GLUE_TOL })
}

/// Window of radius `r` around the root of the `d`-regular tree, embedded in
/// the tree of depth `r + 1` so that every window vertex has degree `d`.
pub fn regular_window_graph(d: usize, r: usize) -> Result<RootedGraph> {
    graph::regular_tree(d, r + 1)
}

fn root_ball(g: &RootedGraph, r: usize) -> Vec<usize> {
    (0..g.n()).filter(|&v| g.depth(v) <= r).collect()
}

/// `hat chi` on `B_r` of the `d`-regular tree for each radius.
#[derive(Debug, Clone, Serialize)]
pub struct ChiTildeReport {
    pub d: usize,
    pub rho: f64,
    pub radii: Vec<usize>,
    pub values: Vec<f64>,
    pub estimate: f64,
    /// Difference of the last two values (zero for a single radius).
    pub truncation_gap: f64,
}

/// Sequence of `hat chi_{B_r}(rho; T_d)` for increasing radii; the last
/// value estimates `tilde chi(rho)` when the minimal degree is `d`.
pub fn chi_tilde_estimate(d: usize, rho: f64, radii: &[usize], opts: &ChiOptions) -> Result<ChiTildeReport> {
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("radii must be non-empty and increasing"));
    }
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let g = regular_window_graph(d, r)?;
        let window = DirichletWindow::new(&g, &root_ball(&g, r))?;
        values.push(chi_window(&window, rho, opts)?.value);
    }
    let estimate = *values.last().unwrap();
    let truncation_gap = if values.len() > 1 { (values[values.len() - 2] - estimate).abs() } else { 0.0 };
    Ok(ChiTildeReport { d, rho, radii: radii.to_vec(), values, estimate, truncation_gap })
}

/// Both sides of `hat chi(rho) = (1/d) bar chi(d rho)` on the same window.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub normalised: f64,
    pub unnormalised: f64,
    /// `unnormalised(d rho) / d`.
    pub rescaled: f64,
    pub diff: f64,
}

/// Compares the normalised value at `rho` with the combinatorial-Laplacian
/// value at `d rho` on `B_r` of `T_d`.
pub fn scaling_check(d: usize, rho: f64, r: usize, opts: &ChiOptions) -> Result<ScalingReport> {
    let g = regular_window_graph(d, r)?;
    let ball = root_ball(&g, r);
    let norm = chi_window(&DirichletWindow::new(&g, &ball)?, rho, opts)?.value;
    let unit = DirichletWindow::new(&g, &ball)?.with_weighting(Weighting::Unit)?;
    let unnormalised = chi_window(&unit, d as f64 * rho, opts)?.value;
    let rescaled = unnormalised / d as f64;
    Ok(ScalingReport { normalised: norm, unnormalised, rescaled, diff: (norm - rescaled).abs() })
}

/// Finite stand-in for a boundary-completed tree.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompletionProtocol {
    /// Radius of the ball kept from the tree.
    pub r: usize,
    /// Minimal degree used for the attached half-trees.
    pub d: usize,
    /// Depth of each attached half-tree that enters the window.
    pub copy_depth: usize,
}

impl CompletionProtocol {
    /// Completed graph and its window: the ball of radius `r + copy_depth`,
    /// with one extra layer so that every window vertex keeps its degree.
    pub fn build(&self, tree: &RootedGraph) -> Result<(RootedGraph, Vec<usize>)> {
        let b = graph::ball(tree, tree.root(), self.r)?;
        let completed = graph::attach_boundary_completion(tree, &b, self.d, self.copy_depth)?;
        let window = root_ball(&completed, self.r + self.copy_depth);
        Ok((completed, window))
    }

    pub fn chi(&self, tree: &RootedGraph, rho: f64, opts: &ChiOptions) -> Result<ChiResult> {
        let (g, window) = self.build(tree)?;
        chi_window(&DirichletWindow::new(&g, &window)?, rho, opts)
    }
}

/// Threshold above which the minimal regular tree is known to minimise.
pub fn minimality_threshold(d_min: usize) -> f64 {
    1.0 / ((d_min as f64 - 1.0) * (d_min as f64 + 1.0).ln())
}

pub const ORDERING_TOL: f64 = 1e-6;
pub const SANDWICH_SLACK: f64 = 0.05;

/// Comparison of the minimal regular tree with sampled trees and the half-tree.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingReport {
    pub d_min: usize,
    pub rho: f64,
    pub threshold: f64,
    pub above_threshold: bool,
    pub chi_regular: f64,
    pub chi_half: f64,
    pub chi_samples: Vec<f64>,
    /// `chi_regular <= chi_sample + tol` for every sample; asserted only above the threshold.
    pub ordering_pass: Option<bool>,
    /// `chi_half <= chi_regular + slack`.
    pub sandwich_lower: bool,
    /// `chi_regular <= chi_half + 1/(d-1) + slack`.
    pub sandwich_upper: bool,
}

/// Runs the completion protocol on `T_{d_min}`, on its half-tree and on each sample.
pub fn minimal_tree_ordering(
    d_min: usize,
    rho: f64,
    samples: &[RootedGraph],
    protocol: CompletionProtocol,
    opts: &ChiOptions,
) -> Result<OrderingReport> {
    check_rho(rho)?;
    if protocol.d != d_min {
        return Err(invalid("protocol degree must equal d_min"));
    }
    let chi_regular = protocol.chi(&graph::regular_tree(d_min, protocol.r)?, rho, opts)?.value;
    let chi_half = protocol.chi(&graph::half_tree(d_min, protocol.r)?, rho, opts)?.value;
    let chi_samples: Vec<f64> =
        samples.par_iter().map(|t| protocol.chi(t, rho, opts).map(|c| c.value)).collect::<Result<_>>()?;
    let threshold = minimality_threshold(d_min);
    let above_threshold = rho >= threshold;
    let ordering_pass = above_threshold.then(|| chi_samples.iter().all(|&c| chi_regular <= c + ORDERING_TOL));
    Ok(OrderingReport {
        d_min,
        rho,
        threshold,
        above_threshold,
        chi_regular,
        chi_half,
        chi_samples,
        ordering_pass,
        sandwich_lower: chi_half <= chi_regular + SANDWICH_SLACK,
        sandwich_upper: chi_regular <= chi_half + 1.0 / (d_min as f64 - 1.0) + SANDWICH_SLACK,
    })
}

/// One radius of the restriction argument.
#[derive(Debug, Clone, Serialize)]
pub struct RestrictionRow {
    pub r: usize,
    /// `p(B_r)`.
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
    pub energy_full: f64,
    pub entropy_full: f64,
    /// `I(p) (1 - P)/P + p(B_{r-1}^c) / (d_min P)`.
    pub energy_bound: f64,
    /// Same with `p(B_{r-1}^c)` replaced by the exact exit flux
    /// `sum_{|x| = r} p(x) out(x)/deg(x)`.
    pub energy_bound_flux: f64,
    /// `J(p) (1 - P)/P`.
    pub entropy_bound: f64,
}

/// Compares `p` (indexed by vertex, degree weights) with its normalised
/// restriction to balls around the root.
pub fn restriction_check(g: &RootedGraph, p: &[f64], radii: &[usize]) -> Result<Vec<RestrictionRow>> {
    ProbabilityVector::new(p.to_vec())?;
    let energy_full = dirichlet_energy(g, p);
    let entropy_full = entropy(p);
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let inside: Vec<bool> = (0..g.n()).map(|v| g.depth(v) <= r).collect();
        let mass: f64 = (0..g.n()).filter(|&v| inside[v]).map(|v| p[v]).sum();
        if !(mass > 0.0) {
            return Err(Error::Domain(format!("p has no mass in the ball of radius {r}")));
        }
        let pr: Vec<f64> = (0..g.n()).map(|v| if inside[v] { p[v] / mass } else { 0.0 }).collect();
        let d_min = (0..g.n()).map(|v| g.degree(v)).min().unwrap_or(1).max(1) as f64;
        let outer: f64 = (0..g.n()).filter(|&v| g.depth(v) + 1 > r).map(|v| p[v]).sum();
        let flux: f64 = (0..g.n())
            .filter(|&v| inside[v])
            .map(|v| {
                let out = g.neighbors(v).iter().filter(|&&u| !inside[u]).count();
                p[v] * out as f64 / g.degree(v) as f64
            })
            .sum();
        let slack = (1.0 - mass) / mass;
        rows.push(RestrictionRow {
            r,
            mass,
            energy: dirichlet_energy(g, &pr),
            entropy: entropy(&pr),
            energy_full,
            entropy_full,
            energy_bound: energy_full * slack + outer / (d_min * mass),
            energy_bound_flux: energy_full * slack + flux / mass,
            entropy_bound: entropy_full * slack,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k2() -> RootedGraph {
        RootedGraph::from_edges(2, &[(0, 1)], 0).unwrap()
    }

    fn path(n: usize) -> RootedGraph {
        let e: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        RootedGraph::from_edges(n, &e, 0).unwrap()
    }

    /// `min_a (sqrt a - sqrt(1-a))^2 + rho H(a)` by a fine grid plus golden refinement.
    fn k2_oracle(rho: f64) -> f64 {
        let f = |a: f64| {
            let h = -(if a > 0.0 { a * a.ln() } else { 0.0 }) - (if a < 1.0 { (1.0 - a) * (1.0 - a).ln() } else { 0.0 });
            (a.sqrt() - (1.0 - a).sqrt()).powi(2) + rho * h
        };
        let n = 1_000_000;
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for i in 0..=n {
            let a = i as f64 / n as f64;
            let v = f(a);
            if v < best {
                best = v;
                arg = a;
            }
        }
        let (mut lo, mut hi) = ((arg - 1e-6f64).max(0.0), (arg + 1e-6f64).min(1.0));
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best.min(f(0.5 * (lo + hi)))
    }

    #[test]
    fn energy_examples() {
        let g = path(4);
        let total: f64 = (0..4).map(|v| g.degree(v) as f64).sum();
        let p: Vec<f64> = (0..4).map(|v| g.degree(v) as f64 / total).collect();
        assert!(dirichlet_energy(&g, &p).abs() < 1e-15);
        for x in 0..4 {
            let d = ProbabilityVector::point_mass(4, x).unwrap();
            assert!((dirichlet_energy(&g, d.as_slice()) - 1.0).abs() < 1e-15);
        }
        let a: f64 = 0.3;
        let want = (a.sqrt() - (1.0 - a).sqrt()).powi(2);
        assert!((dirichlet_energy(&k2(), &[a, 1.0 - a]) - want).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn k2_matches_grid_oracle() {
        // frozen from k2_oracle: rho = 10 minimum near a = 1.2e-4
        for rho in [0.1, 1.0, 10.0] {
            let want = k2_oracle(rho);
            let got = chi_direct(&k2(), rho, 8, 1e-10).unwrap();
            assert!((got.value - want).abs() < 1e-6, "rho {rho}: {} vs {want}", got.value);
            let dual = chi_dual_fixed_point(&k2(), &[0, 1], rho, 1e-12).unwrap();
            assert!((dual.value - got.value).abs() < 1e-8, "rho {rho}: dual {}", dual.value);
        }
    }

    #[test]
    fn tiny_rho_gives_degree_profile() {
        let g = path(5);
        let r = chi_direct(&g, 1e-9, 4, 1e-10).unwrap();
        assert!(r.value.abs() < 1e-8);
        assert!((r.p[1] - 0.25).abs() < 1e-3 && (r.p[0] - 0.125).abs() < 1e-3);
    }

    #[test]
    fn single_vertex_window_has_value_one() {
        let g = path(3);
        let r = chi_dual_fixed_point(&g, &[1], 2.0, 1e-12).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_examples() {
        let g = path(4);
        assert!((chi_boundary(&g, 2, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((chi_boundary(&k2(), 0, 0.0, 3.0).unwrap() - 1.0).abs() < 1e-12);
        let free = chi_direct(&g, 1.0, 4, 1e-10).unwrap().value;
        for b in [0.0, 0.2, 0.7] {
            assert!(chi_boundary(&g, 1, b, 1.0).unwrap() >= free - 1e-10);
        }
    }

    #[test]
    fn user_start_is_never_beaten_by_result() {
        let g = path(6);
        let w = DirichletWindow::whole(&g);
        let p = vec![0.05, 0.1, 0.5, 0.2, 0.1, 0.05];
        let r = chi_window_from(&w, 2.0, &ChiOptions { restarts: 0, ..Default::default() }, &[p.clone()]).unwrap();
        assert!(r.value <= functional(&w, &p, 2.0) + 1e-12);
    }

    #[test]
    fn value_matches_recomputation() {
        let g = graph::regular_tree(3, 2).unwrap();
        let r = chi_direct(&g, 0.7, 4, 1e-10).unwrap();
        let w = DirichletWindow::whole(&g);
        assert!((r.value - functional(&w, &r.p, 0.7)).abs() < 1e-10);
        assert!((r.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn star_identity_single_vertex_piece_is_k2() {
        let single = RootedGraph::from_adjacency(vec![vec![]], 0).unwrap();
        let rep = glue_star_identity(&[(&single, 0)], 1.0, 40, &ChiOptions::default()).unwrap();
        assert!((rep.lhs - k2_oracle(1.0)).abs() < 1e-6);
        assert!(rep.gap < 1e-4, "{rep:?}");
    }

    #[test]
    fn propagation_guard() {
        let single = RootedGraph::from_adjacency(vec![vec![]], 0).unwrap();
        let pieces = [(&single, 0), (&single, 0), (&single, 0)];
        let rep = propagation_check(&pieces, 1e-3, None, Some(1.0), &ChiOptions::default()).unwrap();
        assert!(!rep.hypothesis_met);
        assert!(rep.pass.is_none());
    }

    #[test]
    fn threshold_values() {
        assert!((minimality_threshold(3) - 0.360_673_760_222_241).abs() < 1e-12);
        assert!((minimality_threshold(2) - 0.910_239_226_626_837).abs() < 1e-12);
    }

    #[test]
    fn profile_feasibility() {
        let q = PotentialProfile::from_probability(&[0.2, 0.3, 0.5], 1.5);
        assert!((q.l_value(1.5) - 1.0).abs() < 1e-14);
        assert!(q.is_feasible(1.5));
        assert!(!PotentialProfile { q: vec![0.0, 0.0] }.is_feasible(1.0));
    }
}
