//! Double-exponential potentials, the scale `a_r`, and island systems.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::graph::{ball, BallView, RootedGraph};
use crate::{rng, Error, Result};

const NONE: usize = usize::MAX;

/// Per-vertex potential values (indexed by vertex label) and the parameter `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub rho: f64,
    /// `Some(seed)` when sampled, `None` when prescribed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl PotentialField {
    /// Prescribed field; values must be finite and non-negative.
    pub fn prescribed(values: Vec<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(invalid("rho must be positive"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("potential values must be finite and non-negative"));
        }
        Ok(Self { values, rho, seed: None })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_over(&self, vertices: &[usize]) -> f64 {
        vertices.iter().map(|&v| self.values[v]).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl std::ops::Index<usize> for PotentialField {
    type Output = f64;
    fn index(&self, v: usize) -> &f64 {
        &self.values[v]
    }
}

/// One draw with `P(xi > u) = exp(-e^{u/rho})` for `u >= 0`.
pub fn sample_double_exponential<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> f64 {
    // 1 - U avoids ln(0); U and 1 - U have the same law
    let u: f64 = 1.0 - rng.gen::<f64>();
    let x = rho * (-u.ln()).ln();
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// I.i.d. potential on every vertex of `g`, drawn in label order.
pub fn sample_potential(g: &RootedGraph, rho: f64, seed: u64) -> Result<PotentialField> {
    if !(rho > 0.0) {
        return Err(invalid("rho must be positive"));
    }
    let mut rng = rng::stream(seed, 1);
    let values = (0..g.n()).map(|_| sample_double_exponential(rho, &mut rng)).collect();
    Ok(PotentialField { values, rho, seed: Some(seed) })
}

/// `rho * ln ln r`, defined for `r > e`.
pub fn a_scale(r: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(invalid("rho must be positive"));
    }
    if !(r > std::f64::consts::E) {
        return Err(Error::Domain(format!("a_r needs r > e, got {r}")));
    }
    Ok(rho * r.ln().ln())
}

/// `ceil((ln r)^alpha)`, zero for `r <= 1`.
pub fn island_radius(r: usize, alpha: f64) -> usize {
    if r <= 1 {
        return 0;
    }
    (r as f64).ln().powf(alpha).ceil() as usize
}

/// One connected component of the neighbourhood `D`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Island {
    pub vertices: Vec<usize>,
    /// Vertices of the component lying in the high set `Pi`.
    pub high: Vec<usize>,
    pub diameter: usize,
}

/// High set `Pi`, its neighbourhood `D` and the components of `D` inside `B_r`.
#[derive(Debug, Clone)]
pub struct IslandSystem {
    pub r: usize,
    pub a_param: f64,
    pub alpha: f64,
    /// Neighbourhood radius `S_r`.
    pub s_r: usize,
    /// `L_r = |B_r|`.
    pub l_r: usize,
    /// `a_{L_r}`.
    pub a_l: f64,
    /// `a_{L_r} - 2A`.
    pub threshold: f64,
    pub rho: f64,
    pub ball: BallView,
    pub high: Vec<usize>,
    pub region: Vec<usize>,
    pub islands: Vec<Island>,
    component_of: Vec<usize>,
    in_high: Vec<bool>,
}

impl IslandSystem {
    pub fn is_high(&self, v: usize) -> bool {
        self.in_high.get(v).copied().unwrap_or(false)
    }

    pub fn in_region(&self, v: usize) -> bool {
        self.component(v).is_some()
    }

    /// Index of the island containing `v`.
    pub fn component(&self, v: usize) -> Option<usize> {
        self.component_of.get(v).copied().filter(|&c| c != NONE)
    }

    /// Largest island size `C_{r,A}` (zero without islands).
    pub fn max_island_size(&self) -> usize {
        self.islands.iter().map(|c| c.vertices.len()).max().unwrap_or(0)
    }

    /// Largest number of high vertices in one island.
    pub fn max_high_count(&self) -> usize {
        self.islands.iter().map(|c| c.high.len()).max().unwrap_or(0)
    }
}

/// Builds the island system of `B_r(root)` with `S_r = ceil((ln r)^alpha)`.
pub fn build_islands(
    g: &RootedGraph,
    xi: &PotentialField,
    r: usize,
    a_param: f64,
    alpha: f64,
) -> Result<IslandSystem> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    build_islands_with_radius(g, xi, r, a_param, island_radius(r, alpha), alpha)
}

/// As [`build_islands`] with an explicit neighbourhood radius.
pub fn build_islands_with_radius(
    g: &RootedGraph,
    xi: &PotentialField,
    r: usize,
    a_param: f64,
    s_r: usize,
    alpha: f64,
) -> Result<IslandSystem> {
    if !(a_param > 0.0) {
        return Err(invalid("A must be positive"));
    }
    if xi.len() != g.n() {
        return Err(invalid("potential and graph sizes differ"));
    }
    let b = ball(g, g.root(), r)?;
    let l_r = b.len();
    let a_l = a_scale(l_r as f64, xi.rho)?;
    let threshold = a_l - 2.0 * a_param;
    let high: Vec<usize> = b.vertices().iter().copied().filter(|&v| xi[v] > threshold).collect();
    let mut in_high = vec![false; g.n()];
    high.iter().for_each(|&v| in_high[v] = true);

    // multi-source BFS from Pi, restricted to the ball
    let mut dist = vec![NONE; g.n()];
    let mut queue: VecDeque<usize> = high.iter().copied().collect();
    high.iter().for_each(|&v| dist[v] = 0);
    while let Some(u) = queue.pop_front() {
        if dist[u] == s_r {
            continue;
        }
        for &v in g.neighbors(u) {
            if dist[v] == NONE && b.contains(v) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let region: Vec<usize> = b.vertices().iter().copied().filter(|&v| dist[v] != NONE).collect();

    let mut component_of = vec![NONE; g.n()];
    let mut islands = Vec::new();
    for &start in &region {
        if component_of[start] != NONE {
            continue;
        }
        let id = islands.len();
        let mut vertices = vec![start];
        component_of[start] = id;
        let mut head = 0;
        while head < vertices.len() {
            let u = vertices[head];
            head += 1;
            for &v in g.neighbors(u) {
                if dist[v] != NONE && component_of[v] == NONE {
                    component_of[v] = id;
                    vertices.push(v);
                }
            }
        }
        vertices.sort_unstable();
        let high_here = vertices.iter().copied().filter(|&v| in_high[v]).collect();
        let diameter = component_diameter(g, &vertices, &component_of, id);
        islands.push(Island { vertices, high: high_here, diameter });
    }
    Ok(IslandSystem {
        r,
        a_param,
        alpha,
        s_r,
        l_r,
        a_l,
        threshold,
        rho: xi.rho,
        ball: b,
        high,
        region,
        islands,
        component_of,
        in_high,
    })
}

/// Eccentricity-based diameter within one component; exact on trees.
fn component_diameter(g: &RootedGraph, vertices: &[usize], comp: &[usize], id: usize) -> usize {
    let far = |s: usize| -> (usize, usize) {
        let mut dist = std::collections::HashMap::new();
        dist.insert(s, 0usize);
        let mut queue = VecDeque::from([s]);
        let mut best = (s, 0);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du > best.1 {
                best = (u, du);
            }
            for &v in g.neighbors(u) {
                if comp[v] == id && !dist.contains_key(&v) {
                    dist.insert(v, du + 1);
                    queue.push_back(v);
                }
            }
        }
        best
    };
    if g.is_tree() {
        let (a, _) = far(vertices[0]);
        far(a).1
    } else {
        vertices.iter().map(|&v| far(v).1).max().unwrap_or(0)
    }
}

/// Free parameters of the almost-sure potential lemmas. None of them has a
/// canonical finite-radius value; the defaults are harness choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsParams {
    /// Degree bound factor: degrees in `B_{2r}` are compared with `delta_degree * r`.
    pub delta_degree: f64,
    /// Bound on the number of high vertices per island.
    pub m_a: usize,
    /// Minimal path support exponent for intermediate peaks.
    pub beta: f64,
    /// Intermediate peak level `(1 - eps) a_{L_r}` and density exponent.
    pub eps: f64,
    /// Density exponent for high exceedances.
    pub delta_high: f64,
    /// Constant in the minimal support `C (ln L_r)^delta_high`.
    pub c_high: f64,
    /// Tolerance of the volume-growth check `|ln L_r / r - theta|`.
    pub volume_tol: f64,
    /// Number of random self-avoiding paths.
    pub paths: usize,
    pub seed: u64,
}

impl Default for DiagnosticsParams {
    fn default() -> Self {
        Self {
            delta_degree: 1.0,
            m_a: 4,
            beta: 0.25,
            eps: 0.0625,
            delta_high: 0.5,
            c_high: 1.0,
            volume_tol: 0.5,
            paths: 200,
            seed: 0,
        }
    }
}

/// One diagnostic with its measured value, the bound and whether it held.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostic {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub r: usize,
    pub l_r: usize,
    pub items: Vec<Diagnostic>,
    /// Fraction of sampled paths violating the intermediate-peak bound.
    pub peak_violation_rate: f64,
    /// Fraction of sampled paths violating the high-exceedance bound.
    pub high_violation_rate: f64,
}

/// Empirical frequency checks of the structural and potential lemmas on one
/// sample. `theta` is the growth rate used for the volume and maximum bands.
pub fn diagnostics_suite(
    g: &RootedGraph,
    xi: &PotentialField,
    r: usize,
    a_param: f64,
    alpha: f64,
    theta: f64,
    params: &DiagnosticsParams,
) -> Result<DiagnosticsReport> {
    let islands = build_islands(g, xi, r, a_param, alpha)?;
    let l_r = islands.l_r;
    let log_l = (l_r as f64).ln();
    let mut items = Vec::new();

    let big = ball(g, g.root(), 2 * r)?;
    let max_deg = big.vertices().iter().map(|&v| g.degree(v)).max().unwrap_or(0) as f64;
    let deg_bound = params.delta_degree * r as f64;
    items.push(Diagnostic {
        name: "max_degree_in_double_ball".into(),
        value: max_deg,
        bound: deg_bound,
        pass: max_deg < deg_bound,
    });

    let growth = if r > 0 { log_l / r as f64 } else { f64::NAN };
    items.push(Diagnostic {
        name: "volume_growth".into(),
        value: growth,
        bound: theta,
        pass: (growth - theta).abs() <= params.volume_tol,
    });

    let count = islands.max_high_count() as f64;
    items.push(Diagnostic {
        name: "island_high_count".into(),
        value: count,
        bound: params.m_a as f64,
        pass: count <= params.m_a as f64,
    });

    let max_xi = xi.max_over(islands.ball.vertices());
    let dev = (max_xi - islands.a_l).abs();
    let band = 2.0 * xi.rho * (r as f64).ln() / (theta * r as f64);
    items.push(Diagnostic {
        name: "max_potential_band".into(),
        value: dev,
        bound: band,
        pass: dev <= band,
    });

    let peak_level = (1.0 - params.eps) * islands.a_l;
    let min_support_peak = log_l.powf(params.beta).ceil() as usize;
    let min_support_high = (params.c_high * log_l.powf(params.delta_high)).ceil() as usize;
    let mut rng = rng::stream(params.seed, 2);
    let (mut peak_checked, mut peak_bad, mut high_checked, mut high_bad) = (0, 0, 0, 0);
    let ball_vertices = islands.ball.vertices();
    for _ in 0..params.paths {
        let start = ball_vertices[rng.gen_range(0..ball_vertices.len())];
        let target = rng.gen_range(min_support_peak.min(min_support_high).max(1)..=4 * min_support_peak.max(min_support_high).max(1));
        let path = non_backtracking_path(g, start, target, &mut rng);
        let len = path.len() as f64;
        if path.len() >= min_support_peak {
            peak_checked += 1;
            let n = path.iter().filter(|&&v| xi[v] > peak_level).count() as f64;
            if n > len / log_l.powf(params.eps) {
                peak_bad += 1;
            }
        }
        if path.len() >= min_support_high {
            high_checked += 1;
            let n = path.iter().filter(|&&v| xi[v] > islands.threshold).count() as f64;
            if n > len / log_l.powf(params.delta_high) {
                high_bad += 1;
            }
        }
    }
    let rate = |bad: usize, all: usize| if all == 0 { 0.0 } else { bad as f64 / all as f64 };
    Ok(DiagnosticsReport {
        r,
        l_r,
        items,
        peak_violation_rate: rate(peak_bad, peak_checked),
        high_violation_rate: rate(high_bad, high_checked),
    })
}

/// Random non-backtracking (hence self-avoiding on trees) path with up to
/// `len` vertices.
fn non_backtracking_path<R: Rng>(g: &RootedGraph, start: usize, len: usize, rng: &mut R) -> Vec<usize> {
    let mut path = vec![start];
    let mut prev = NONE;
    while path.len() < len {
        let cur = *path.last().unwrap();
        let options: Vec<usize> =
            g.neighbors(cur).iter().copied().filter(|&u| u != prev && !path.contains(&u)).collect();
        if options.is_empty() {
            break;
        }
        prev = cur;
        path.push(options[rng.gen_range(0..options.len())]);
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{regular_tree, RootedGraph};

    #[test]
    fn a_scale_values() {
        let e = std::f64::consts::E;
        assert!((a_scale(e.powf(e), 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((a_scale(e.powf(3f64.exp()), 2.0).unwrap() - 6.0).abs() < 1e-12);
        assert!(a_scale(2.0, 1.0).is_err());
        assert!(a_scale(e, 1.0).is_err());
    }

    #[test]
    fn island_radius_rounding() {
        assert_eq!(island_radius(1, 0.5), 0);
        assert_eq!(island_radius(10, 0.5), 2);
        assert_eq!(island_radius(3, 0.5), 2);
    }

    #[test]
    fn zero_field_has_no_islands() {
        let g = regular_tree(3, 4).unwrap();
        let xi = PotentialField::prescribed(vec![0.0; g.n()], 1.0).unwrap();
        // L_4 = 46, a = ln ln 46 = 1.342 > 2A for A = 0.5
        let sys = build_islands(&g, &xi, 4, 0.5, 0.5).unwrap();
        assert!(sys.high.is_empty() && sys.region.is_empty() && sys.islands.is_empty());
        assert_eq!(sys.max_island_size(), 0);
    }

    #[test]
    fn single_peak_gives_ball_island() {
        // path 0-1-2-...-9 rooted at 0; r = 10 so S_r = 2
        let edges: Vec<(usize, usize)> = (0..9).map(|i| (i, i + 1)).collect();
        let g = RootedGraph::from_edges(10, &edges, 0).unwrap();
        let mut v = vec![0.0; 10];
        v[5] = 50.0;
        let xi = PotentialField::prescribed(v, 1.0).unwrap();
        let sys = build_islands(&g, &xi, 10, 0.1, 0.5).unwrap();
        assert_eq!(sys.s_r, 2);
        assert_eq!(sys.high, vec![5]);
        assert_eq!(sys.islands.len(), 1);
        assert_eq!(sys.islands[0].vertices, vec![3, 4, 5, 6, 7]);
        assert_eq!(sys.islands[0].diameter, 4);
    }

    #[test]
    fn survival_function_matches() {
        let mut rng = crate::rng::stream(5, 0);
        let rho = 1.5;
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_double_exponential(rho, &mut rng)).collect();
        for u in [0.0, rho / 2.0, rho, 2.0 * rho] {
            let p = (-(u / rho).exp()).exp();
            let hat = draws.iter().filter(|&&x| x > u).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((hat - p).abs() <= 4.0 * se, "u={u}: {hat} vs {p}");
        }
    }

    #[test]
    fn deterministic_sampling() {
        let g = regular_tree(3, 3).unwrap();
        let a = sample_potential(&g, 1.0, 9).unwrap();
        let b = sample_potential(&g, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn regular_tree_degree_diagnostic() {
        let g = regular_tree(3, 12).unwrap();
        let xi = sample_potential(&g, 1.0, 1).unwrap();
        let params = DiagnosticsParams { delta_degree: 1.0, ..Default::default() };
        let rep = diagnostics_suite(&g, &xi, 6, 1.0, 0.5, 2f64.ln(), &params).unwrap();
        assert_eq!(rep.items[0].value, 3.0);
        assert!(rep.items[0].pass);
    }

    #[test]
    fn zero_field_reports_max_deviation() {
        let g = regular_tree(3, 8).unwrap();
        let xi = PotentialField::prescribed(vec![0.0; g.n()], 1.0).unwrap();
        let rep = diagnostics_suite(&g, &xi, 8, 1.0, 0.5, 2f64.ln(), &Default::default()).unwrap();
        let item = rep.items.iter().find(|d| d.name == "max_potential_band").unwrap();
        let l = g.n() as f64;
        assert!((item.value - l.ln().ln()).abs() < 1e-12);
        assert!(!item.pass);
    }
}
