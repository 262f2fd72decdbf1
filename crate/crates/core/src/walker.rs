//! Continuous-time random walk and Feynman-Kac Monte Carlo.
//!
//! The walk waits an `Exp(1)` time at every vertex and then jumps to a
//! uniformly chosen neighbour; its generator is the normalised Laplacian.
//! Time integrals of the potential are computed exactly from the piecewise
//! constant trajectory.
//!
//! Monte Carlo work is split into fixed chunks, each with its own seeded
//! stream; chunk accumulators are merged in chunk order, so results do not
//! depend on the number of threads.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::invalid;
use crate::graph::RootedGraph;
use crate::potential::IslandSystem;
use crate::rng;
use crate::spectral::DirichletWindow;
use crate::stats::Welford;
use crate::{Error, Result};

/// Samples per Monte Carlo chunk.
pub const CHUNK: usize = 4096;

const STREAM_WALK: u64 = 4;
const STREAM_MC: u64 = 5;

/// A trajectory up to a horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    /// `X_{T_0}, X_{T_1}, ...`.
    pub vertices: Vec<usize>,
    /// `T_0 = 0 < T_1 < ...`, one per entry of `vertices`.
    pub jump_times: Vec<f64>,
    pub horizon: f64,
}

impl PathRecord {
    /// Number of jumps by the horizon.
    pub fn jumps(&self) -> usize {
        self.vertices.len() - 1
    }

    /// `int_0^t f(X_s) ds`.
    pub fn integral(&self, f: &[f64]) -> f64 {
        let n = self.vertices.len();
        let mut total = 0.0;
        for i in 0..n {
            let end = if i + 1 < n { self.jump_times[i + 1] } else { self.horizon };
            total += f[self.vertices[i]] * (end - self.jump_times[i]);
        }
        total
    }

    /// Time spent at each vertex of a graph with `n` vertices.
    pub fn occupation(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        let m = self.vertices.len();
        for i in 0..m {
            let end = if i + 1 < m { self.jump_times[i + 1] } else { self.horizon };
            occ[self.vertices[i]] += end - self.jump_times[i];
        }
        occ
    }
}

fn uniform_neighbor<R: Rng + ?Sized>(g: &RootedGraph, x: usize, rng: &mut R) -> usize {
    let nb = g.neighbors(x);
    nb[rng.gen_range(0..nb.len())]
}

/// Trajectory from `start` up to time `t` driven by `rng`.
pub fn simulate_walk_with<R: Rng + ?Sized>(g: &RootedGraph, start: usize, t: f64, rng: &mut R) -> PathRecord {
    let mut vertices = vec![start];
    let mut jump_times = vec![0.0];
    let mut now = 0.0;
    let mut x = start;
    if g.degree(x) > 0 {
        loop {
            let h: f64 = Exp1.sample(rng);
            if now + h > t {
                break;
            }
            now += h;
            x = uniform_neighbor(g, x, rng);
            vertices.push(x);
            jump_times.push(now);
        }
    }
    PathRecord { vertices, jump_times, horizon: t }
}

/// Seeded trajectory from `start` up to time `t`.
pub fn simulate_walk(g: &RootedGraph, start: usize, t: f64, seed: u64) -> Result<PathRecord> {
    g.check_vertex(start)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid("horizon must be finite and non-negative"));
    }
    Ok(simulate_walk_with(g, start, t, &mut rng::stream(seed, STREAM_WALK)))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: u64,
}

impl From<Welford> for McEstimate {
    fn from(w: Welford) -> Self {
        Self { estimate: w.mean, std_error: w.std_error(), n: w.count }
    }
}

/// Runs `n` samples in chunks of [`CHUNK`] and merges them in chunk order.
fn chunked<F>(n: usize, seed: u64, sample: F) -> Welford
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Welford> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(rng::child_seed(seed, c as u64), STREAM_MC);
            let mut w = Welford::new();
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                w.push(sample(&mut r));
            }
            w
        })
        .collect();
    let mut total = Welford::new();
    parts.iter().for_each(|p| total.merge(p));
    total
}

/// One sample of `exp(int_0^t xi(X_s) ds) 1{X stays in the window}` from `y`.
fn fk_sample<R: Rng + ?Sized>(window: &DirichletWindow, xi: &[f64], y: usize, t: f64, rng: &mut R) -> f64 {
    let g = window.graph();
    let mut x = y;
    let mut now = 0.0;
    let mut integral = 0.0;
    loop {
        if g.degree(x) == 0 {
            integral += xi[x] * (t - now);
            break;
        }
        let h: f64 = Exp1.sample(rng);
        if now + h > t {
            integral += xi[x] * (t - now);
            break;
        }
        integral += xi[x] * h;
        now += h;
        x = uniform_neighbor(g, x, rng);
        if !window.contains(x) {
            return 0.0;
        }
    }
    integral.exp()
}

/// `E_y[exp(int_0^t xi(X_s) ds) 1{tau > t}]`, `tau` the exit time of the
/// window (no killing when the window is the whole graph).
pub fn fk_total_mass_mc(
    window: &DirichletWindow,
    xi: &[f64],
    y: usize,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if xi.len() != window.graph().n() {
        return Err(invalid("potential and graph sizes differ"));
    }
    if !window.contains(y) {
        return Err(invalid(format!("start {y} outside the window")));
    }
    if !(t >= 0.0) || !t.is_finite() || n_samples == 0 {
        return Err(invalid("need a finite horizon and at least one sample"));
    }
    Ok(chunked(n_samples, seed, |r| fk_sample(window, xi, y, t, r)).into())
}

/// Relative standard error targeted by [`fk_total_mass_adaptive`].
pub const TARGET_REL_SE: f64 = 0.05;

/// As [`fk_total_mass_mc`], doubling the sample size from `min_n` until the
/// relative standard error is at most [`TARGET_REL_SE`] or `cap` is reached.
pub fn fk_total_mass_adaptive(
    window: &DirichletWindow,
    xi: &[f64],
    y: usize,
    t: f64,
    min_n: usize,
    cap: usize,
    seed: u64,
) -> Result<McEstimate> {
    let mut n = min_n.max(1);
    loop {
        let est = fk_total_mass_mc(window, xi, y, t, n, seed)?;
        if est.std_error <= TARGET_REL_SE * est.estimate.abs() || n >= cap {
            return Ok(est);
        }
        n = (2 * n).min(cap);
    }
}

/// Checks that `path` is a nearest-neighbour path of `g`.
pub fn check_path(g: &RootedGraph, path: &[usize]) -> Result<()> {
    if path.is_empty() {
        return Err(invalid("a path has at least one vertex"));
    }
    for &v in path {
        g.check_vertex(v)?;
    }
    if let Some(w) = path.windows(2).find(|w| !g.has_edge(w[0], w[1])) {
        return Err(invalid(format!("{} and {} are not adjacent", w[0], w[1])));
    }
    Ok(())
}

/// `prod_{i < l} 1 / (gamma - (xi(pi_i) - 1))`.
pub fn path_product(xi: &[f64], path: &[usize], gamma: f64) -> f64 {
    path[..path.len() - 1].iter().map(|&v| 1.0 / (gamma - (xi[v] - 1.0))).product()
}

/// Outcome of a Monte Carlo check against an exact value or a bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub mc: McEstimate,
    /// Exact left side where available.
    pub exact: Option<f64>,
    pub rhs: f64,
    pub pass: bool,
}

fn check_gamma(xi: &[f64], path: &[usize], gamma: f64) -> Result<()> {
    let worst = path[..path.len() - 1].iter().map(|&v| xi[v] - 1.0).fold(f64::NEG_INFINITY, f64::max);
    if !(gamma > worst) {
        return Err(Error::Domain(format!("gamma = {gamma} must exceed max(xi - 1) = {worst} along the path")));
    }
    Ok(())
}

/// Conditional expectation of `exp(int_0^{T_l} (xi - gamma))` given the jump
/// skeleton `path`: the holding times are i.i.d. `Exp(1)`. Returns the
/// Monte Carlo estimate and the exact product; passes when they agree
/// within three standard errors.
pub fn path_evaluation_check(
    g: &RootedGraph,
    xi: &[f64],
    path: &[usize],
    gamma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_path(g, path)?;
    check_gamma(xi, path, gamma)?;
    if n_samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let rates: Vec<f64> = path[..path.len() - 1].iter().map(|&v| xi[v] - gamma).collect();
    let mc: McEstimate = chunked(n_samples, seed, |r| {
        rates
            .iter()
            .map(|&c| {
                let h: f64 = Exp1.sample(r);
                c * h
            })
            .sum::<f64>()
            .exp()
    })
    .into();
    let exact = path_product(xi, path, gamma);
    let pass = (mc.estimate - exact).abs() <= 3.0 * mc.std_error + 1e-14 * exact;
    Ok(BoundReport { mc, exact: Some(exact), rhs: exact, pass })
}

/// `M^{r,eps}_pi`: indices `i < |pi|` with `xi(pi_i) <= level`.
pub fn moderate_count(xi: &[f64], path: &[usize], level: f64) -> usize {
    path[..path.len() - 1].iter().filter(|&&v| xi[v] <= level).count()
}

/// Key identifying an equivalence class of paths.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EquivalenceKey {
    pub m: usize,
    pub checks: Vec<Vec<usize>>,
    pub bar: Vec<usize>,
}

/// Splitting of a path into exterior pieces and island excursions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathDecomposition {
    /// Pieces ending at their first visit to a high vertex.
    pub checks: Vec<Vec<usize>>,
    /// Excursions from a high vertex up to the first exit from the region.
    pub hats: Vec<Vec<usize>>,
    /// Terminal piece; the whole path when no high vertex is visited.
    pub bar: Vec<usize>,
    pub m: usize,
    pub s: usize,
    pub k_eps: usize,
    /// Moderate counts of the check pieces and of the bar.
    pub moderate_checks: Vec<usize>,
    pub moderate_bar: usize,
    /// Largest principal eigenvalue of the islands whose high vertices the
    /// path visits; `-inf` if none.
    pub lambda_islands: f64,
}

impl PathDecomposition {
    /// Concatenation `check_1 o hat_1 o ... o check_m o hat_m o bar`.
    pub fn concatenate(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        let pieces = self
            .checks
            .iter()
            .zip(&self.hats)
            .flat_map(|(c, h)| [c, h])
            .chain(std::iter::once(&self.bar));
        for piece in pieces {
            if out.is_empty() {
                out.extend_from_slice(piece);
            } else {
                debug_assert_eq!(out.last(), piece.first());
                out.extend_from_slice(&piece[1..]);
            }
        }
        out
    }

    pub fn key(&self) -> EquivalenceKey {
        EquivalenceKey { m: self.m, checks: self.checks.clone(), bar: self.bar.clone() }
    }
}

pub fn equivalence_key(dec: &PathDecomposition) -> EquivalenceKey {
    dec.key()
}

/// Island data needed by the decomposition.
#[derive(Debug, Clone)]
pub struct IslandContext<'a> {
    pub islands: &'a IslandSystem,
    pub xi: &'a [f64],
    /// Principal eigenvalue of each island, in island order.
    pub lambdas: &'a [f64],
}

impl IslandContext<'_> {
    /// `(1 - eps) a_{L_r}`.
    pub fn moderate_level(&self, eps: f64) -> f64 {
        (1.0 - eps) * self.islands.a_l
    }
}

/// Unique decomposition of a path inside `B_r` into check pieces, hat
/// excursions and a terminal bar.
pub fn decompose_path(path: &[usize], ctx: &IslandContext, eps: f64) -> Result<PathDecomposition> {
    if path.is_empty() {
        return Err(invalid("a path has at least one vertex"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps must lie in (0, 1)"));
    }
    let isl = ctx.islands;
    if let Some(&v) = path.iter().find(|&&v| !isl.ball.contains(v)) {
        return Err(Error::Domain(format!("path leaves the ball at vertex {v}")));
    }
    let level = ctx.moderate_level(eps);
    let last = path.len() - 1;
    let mut checks = Vec::new();
    let mut hats = Vec::new();
    let mut start = 0;
    let bar;
    loop {
        match (start..=last).find(|&i| isl.is_high(path[i])) {
            None => {
                bar = path[start..].to_vec();
                break;
            }
            Some(h) => {
                checks.push(path[start..=h].to_vec());
                match (h + 1..=last).find(|&i| !isl.in_region(path[i])) {
                    None => {
                        hats.push(path[h..].to_vec());
                        bar = vec![path[last]];
                        break;
                    }
                    Some(e) => {
                        hats.push(path[h..=e].to_vec());
                        start = e;
                    }
                }
            }
        }
    }
    let m = hats.len();
    let moderate_checks: Vec<usize> = checks.iter().map(|c| moderate_count(ctx.xi, c, level)).collect();
    let moderate_bar = moderate_count(ctx.xi, &bar, level);
    let s = checks.iter().map(|c| c.len() - 1).sum::<usize>() + bar.len() - 1;
    let k_eps = moderate_checks.iter().sum::<usize>() + moderate_bar;
    let mut lambda_islands = f64::NEG_INFINITY;
    for &v in path {
        if isl.is_high(v) {
            let c = isl.component(v).expect("high vertices lie in islands");
            lambda_islands = lambda_islands.max(ctx.lambdas[c]);
        }
    }
    Ok(PathDecomposition { checks, hats, bar, m, s, k_eps, moderate_checks, moderate_bar, lambda_islands })
}

/// `q_A = 1/(1 + A)`.
pub fn q_a(a_param: f64) -> f64 {
    1.0 / (1.0 + a_param)
}

/// `c = log(2 / (q_A eps rho))`.
pub fn excursion_constant(a_param: f64, eps: f64, rho: f64) -> f64 {
    (2.0 / (q_a(a_param) * eps * rho)).ln()
}

fn triple_log(l: usize) -> Result<f64> {
    let x = (l as f64).ln().ln();
    if !(x > 0.0) {
        return Err(Error::Domain(format!("log log log L needs L > e^e, got {l}")));
    }
    Ok(x.ln())
}

/// Bound for a path that avoids high vertices before its last step:
/// conditional mass given the skeleton against `q_A^l exp(M (c - log log log L_r))`.
pub fn excursion_mass_check(
    g: &RootedGraph,
    ctx: &IslandContext,
    path: &[usize],
    gamma: f64,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_path(g, path)?;
    let isl = ctx.islands;
    if path.iter().any(|&v| !isl.ball.contains(v)) {
        return Err(Error::Domain("path leaves the ball".into()));
    }
    if path[..path.len() - 1].iter().any(|&v| isl.is_high(v)) {
        return Err(Error::Domain("path visits a high vertex before its end".into()));
    }
    if !(gamma > isl.a_l - isl.a_param) {
        return Err(Error::Domain(format!("gamma must exceed a - A = {}", isl.a_l - isl.a_param)));
    }
    let mut report = path_evaluation_check(g, ctx.xi, path, gamma, n_samples, seed)?;
    let l = path.len() - 1;
    let k = moderate_count(ctx.xi, path, ctx.moderate_level(eps));
    let c = excursion_constant(isl.a_param, eps, isl.rho);
    let rhs = q_a(isl.a_param).powi(l as i32) * (k as f64 * (c - triple_log(isl.l_r)?)).exp();
    report.rhs = rhs;
    report.pass = report.mc.estimate <= rhs + 3.0 * report.mc.std_error
        && report.exact.is_some_and(|e| e <= rhs * (1.0 + 1e-12));
    Ok(report)
}

/// Right side of the equivalence-class bound for a decomposed path.
pub fn class_bound(dec: &PathDecomposition, ctx: &IslandContext, gamma: f64, eps: f64, d_min: usize) -> Result<f64> {
    let isl = ctx.islands;
    let c_max = isl.max_island_size() as f64;
    let c = excursion_constant(isl.a_param, eps, isl.rho);
    let first = if dec.m > 0 { c_max.sqrt() } else { 1.0 };
    let second = if dec.m > 0 { (1.0 + c_max / (gamma - dec.lambda_islands)).powi(dec.m as i32) } else { 1.0 };
    let third = (q_a(isl.a_param) / d_min as f64).powi(dec.s as i32);
    let fourth = (dec.k_eps as f64 * (c - triple_log(isl.l_r)?)).exp();
    Ok(first * second * third * fourth)
}

/// Bound on `E_{pi_0}[exp(int_0^t (xi - gamma)) 1{path up to t ~ pi}]`.
/// Walks leaving the ball contribute zero; `d_min` is the smallest degree
/// in the ball.
pub fn class_mass_check(
    g: &RootedGraph,
    ctx: &IslandContext,
    path: &[usize],
    gamma: f64,
    t: f64,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_path(g, path)?;
    let isl = ctx.islands;
    let dec = decompose_path(path, ctx, eps)?;
    let floor = dec.lambda_islands.max(isl.a_l - isl.a_param);
    if !(gamma > floor) {
        return Err(Error::Domain(format!("gamma must exceed max(lambda, a - A) = {floor}")));
    }
    if !(t >= 0.0) || !t.is_finite() || n_samples == 0 {
        return Err(invalid("need a finite horizon and at least one sample"));
    }
    let key = dec.key();
    let d_min = isl.ball.vertices().iter().map(|&v| g.degree(v)).min().unwrap_or(1).max(1);
    let rhs = class_bound(&dec, ctx, gamma, eps, d_min)?;
    let shifted: Vec<f64> = ctx.xi.iter().map(|x| x - gamma).collect();
    let mc: McEstimate = chunked(n_samples, seed, |r| {
        let walk = simulate_walk_with(g, path[0], t, r);
        if walk.vertices.iter().any(|&v| !isl.ball.contains(v)) {
            return 0.0;
        }
        match decompose_path(&walk.vertices, ctx, eps) {
            Ok(d) if d.key() == key => walk.integral(&shifted).exp(),
            _ => 0.0,
        }
    })
    .into();
    let pass = mc.estimate <= rhs + 3.0 * mc.std_error;
    Ok(BoundReport { mc, exact: None, rhs, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{build_islands_with_radius, PotentialField};

    fn path_graph(n: usize) -> RootedGraph {
        let e: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        RootedGraph::from_edges(n, &e, 0).unwrap()
    }

    #[test]
    fn k2_walk_alternates() {
        let g = RootedGraph::from_edges(2, &[(0, 1)], 0).unwrap();
        let w = simulate_walk(&g, 0, 20.0, 3).unwrap();
        for (i, &v) in w.vertices.iter().enumerate() {
            assert_eq!(v, i % 2);
        }
        assert!(w.jump_times.windows(2).all(|t| t[0] < t[1]));
        assert!(*w.jump_times.last().unwrap() <= 20.0);
    }

    #[test]
    fn zero_and_constant_potential() {
        let g = path_graph(5);
        let win = DirichletWindow::whole(&g);
        let zero = fk_total_mass_mc(&win, &[0.0; 5], 2, 3.0, 1000, 1).unwrap();
        assert_eq!(zero.estimate, 1.0);
        assert_eq!(zero.std_error, 0.0);
        let c = fk_total_mass_mc(&win, &[0.7; 5], 2, 3.0, 1000, 1).unwrap();
        assert!((c.estimate - (2.1f64).exp()).abs() < 1e-12 * c.estimate);
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let g = path_graph(6);
        let win = DirichletWindow::new(&g, &[1, 2, 3, 4]).unwrap();
        let xi = [0.1, 0.5, 0.2, 0.9, 0.3, 0.4];
        let a = fk_total_mass_mc(&win, &xi, 2, 2.0, 3 * CHUNK + 17, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| fk_total_mass_mc(&win, &xi, 2, 2.0, 3 * CHUNK + 17, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn path_evaluation_examples() {
        let g = path_graph(3);
        let xi = [0.0, 0.0, 0.0];
        let r = path_evaluation_check(&g, &xi, &[1], 2.0, 10, 0).unwrap();
        assert_eq!(r.exact, Some(1.0));
        assert_eq!(r.mc.estimate, 1.0);
        assert_eq!(path_product(&xi, &[0, 1], 2.0), 1.0 / 3.0);
        assert!(path_evaluation_check(&g, &xi, &[0, 1], -1.5, 10, 0).is_err());
    }

    fn fixture() -> (RootedGraph, PotentialField, IslandSystem) {
        // path 0..11, single high vertex at 5, neighbourhood radius 1
        let g = path_graph(12);
        let mut v = vec![0.0; 12];
        v[5] = 10.0;
        let xi = PotentialField::prescribed(v, 1.0).unwrap();
        let isl = build_islands_with_radius(&g, &xi, 11, 0.1, 1, 0.5).unwrap();
        (g, xi, isl)
    }

    #[test]
    fn hand_built_decomposition() {
        let (_, xi, isl) = fixture();
        assert_eq!(isl.high, vec![5]);
        assert_eq!(isl.region, vec![4, 5, 6]);
        let lambdas = vec![1.0];
        let ctx = IslandContext { islands: &isl, xi: &xi.values, lambdas: &lambdas };
        let path = vec![2, 3, 4, 5, 4, 5, 6, 7, 8, 7];
        let d = decompose_path(&path, &ctx, 0.25).unwrap();
        assert_eq!(d.m, 1);
        assert_eq!(d.checks, vec![vec![2, 3, 4, 5]]);
        assert_eq!(d.hats, vec![vec![5, 4, 5, 6, 7]]);
        assert_eq!(d.bar, vec![7, 8, 7]);
        assert_eq!(d.s, 5);
        assert_eq!(d.concatenate(), path);
        assert_eq!(d.lambda_islands, 1.0);

        let other = vec![2, 3, 4, 5, 6, 5, 4, 5, 6, 7, 8, 7];
        assert_eq!(decompose_path(&other, &ctx, 0.25).unwrap().key(), d.key());

        let quiet = vec![0, 1, 2, 1];
        let q = decompose_path(&quiet, &ctx, 0.25).unwrap();
        assert_eq!((q.m, q.s, q.k_eps), (0, 3, 3));
        assert_eq!(q.lambda_islands, f64::NEG_INFINITY);
        assert_eq!(decompose_path(&[3], &ctx, 0.25).unwrap().k_eps, 0);
    }

    #[test]
    fn path_ending_inside_island_has_empty_bar() {
        let (_, xi, isl) = fixture();
        let lambdas = vec![1.0];
        let ctx = IslandContext { islands: &isl, xi: &xi.values, lambdas: &lambdas };
        let d = decompose_path(&[3, 4, 5, 6], &ctx, 0.25).unwrap();
        assert_eq!(d.m, 1);
        assert_eq!(d.bar, vec![6]);
        assert_eq!(d.s, 2);
    }

    #[test]
    fn q_a_examples() {
        assert_eq!(q_a(1.0), 0.5);
        assert!((excursion_constant(1.0, 0.25, 2.0) - (8.0f64).ln()).abs() < 1e-15);
    }
}
