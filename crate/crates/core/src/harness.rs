//! Experiment orchestration: growth-rate scales, the `F_{c,t}` maximiser,
//! the high-exceedance ball scanner, the degree-product diagnostic, the two
//! theorem experiments and run manifests.
//!
//! Every experiment returns a table that renders to CSV (primary output) and
//! JSON (mirror). Rows are computed in parallel and assembled by index.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::invalid;
use crate::evolver;
use crate::graph::{self, OffspringLaw, RootedGraph};
use crate::potential::{self, PotentialField};
use crate::rng;
use crate::spectral::{self, DirichletWindow};
use crate::variational::{self, ChiOptions, CompletionProtocol, PotentialProfile};
use crate::walker;
use crate::{Error, Result};

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

/// `rho t / ln ln t`, the radius scale of the optimal island; defined for `t > e`.
pub fn r_frak(t: f64, rho: f64) -> Result<f64> {
    check_positive("rho", rho)?;
    if !(t > std::f64::consts::E) || !t.is_finite() {
        return Err(Error::Domain(format!("need t > e, got {t}")));
    }
    Ok(rho * t / t.ln().ln())
}

/// Per-unit-time exponent `rho ln(theta r_t) - rho - chi_tilde` of `U*(t)`.
pub fn u_star_log(t: f64, rho: f64, theta: f64, chi_tilde: f64) -> Result<f64> {
    check_positive("theta", theta)?;
    Ok(rho * (theta * r_frak(t, rho)?).ln() - rho - chi_tilde)
}

/// `F_{c,t}(r) = rho ln(theta r) - (r/t) [ln ln(theta r) - c]`.
pub fn f_value(c: f64, t: f64, rho: f64, theta: f64, r: f64) -> f64 {
    rho * (theta * r).ln() - r / t * ((theta * r).ln().ln() - c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FMaximizer {
    pub c: f64,
    pub t: f64,
    pub r_star: f64,
    pub f_value: f64,
    pub r_frak: f64,
    /// `r_star / r_t`.
    pub ratio: f64,
    /// `rho ln(theta r_t) - rho`.
    pub envelope: f64,
}

/// Maximiser of `F_{c,t}` over `theta r >= e`, from the stationarity condition
/// `rho t = r [ln ln(theta r) - c + 1/ln(theta r)]` solved by bisection.
pub fn f_maximizer(c: f64, t: f64, rho: f64, theta: f64) -> Result<FMaximizer> {
    check_positive("theta", theta)?;
    let rf = r_frak(t, rho)?;
    let h = |r: f64| {
        let u = (theta * r).ln();
        rho * t - r * (u.ln() - c + 1.0 / u)
    };
    let mut lo = std::f64::consts::E / theta;
    if !(h(lo) > 0.0) {
        return Err(Error::NoConvergence(format!("F_(c,t) has no interior maximum for c = {c}, t = {t}")));
    }
    let mut hi = rf.max(2.0 * lo);
    let mut widen = 0;
    while h(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        widen += 1;
        if widen > 2000 || !hi.is_finite() {
            return Err(Error::NoConvergence("no sign change while widening the bracket".into()));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r_star = 0.5 * (lo + hi);
    Ok(FMaximizer {
        c,
        t,
        r_star,
        f_value: f_value(c, t, rho, theta, r_star),
        r_frak: rf,
        ratio: r_star / rf,
        envelope: rho * (theta * rf).ln() - rho,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FMaxTable {
    pub rho: f64,
    pub theta: f64,
    pub rows: Vec<FMaximizer>,
}

impl FMaxTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("c,t,r_star,f_value,r_frak,ratio,envelope\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.c, r.t, r.r_star, r.f_value, r.r_frak, r.ratio, r.envelope);
        }
        s
    }
}

/// `f_maximizer` over a grid of `(c, t)`.
pub fn f_max_table(cs: &[f64], ts: &[f64], rho: f64, theta: f64) -> Result<FMaxTable> {
    let rows = cs
        .iter()
        .flat_map(|&c| ts.iter().map(move |&t| (c, t)))
        .map(|(c, t)| f_maximizer(c, t, rho, theta))
        .collect::<Result<_>>()?;
    Ok(FMaxTable { rho, theta, rows })
}

/// One scanner hit: a centre and the isomorphism onto the pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanHit {
    pub z: usize,
    /// Distance from the root.
    pub depth: usize,
    /// `(graph vertex, pattern vertex)` pairs.
    pub witness: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub ell: usize,
    pub ball_size: usize,
    /// `rho ln ln |B_ell|`.
    pub threshold: f64,
    /// Centres whose `(R+1)`-ball lies in `B_ell`.
    pub candidates: usize,
    pub hits: Vec<ScanHit>,
    pub min_depth: Option<usize>,
    /// Witnesses that failed re-verification (always zero unless the matcher is wrong).
    pub rejected: usize,
}

fn verify_witness(
    g: &RootedGraph,
    xi: &[f64],
    pattern: &RootedGraph,
    q: &[f64],
    radius: usize,
    threshold: f64,
    z: usize,
    witness: &[(usize, usize)],
) -> bool {
    if witness.len() != pattern.n() {
        return false;
    }
    let mut to_pattern = std::collections::HashMap::new();
    let mut seen = vec![false; pattern.n()];
    for &(v, p) in witness {
        if p >= pattern.n() || seen[p] || to_pattern.insert(v, p).is_some() {
            return false;
        }
        seen[p] = true;
    }
    if to_pattern.get(&z) != Some(&pattern.root()) {
        return false;
    }
    let mut edges = 0;
    for &(v, p) in witness {
        for &u in g.neighbors(v) {
            if let Some(&pu) = to_pattern.get(&u) {
                if !pattern.has_edge(p, pu) {
                    return false;
                }
                edges += 1;
            }
        }
        if pattern.depth(p) <= radius && xi[v] < threshold + q[p] {
            return false;
        }
    }
    edges == 2 * pattern.num_edges()
}

/// Finds every `z` with `B_{R+1}(z)` inside `B_ell`, rooted-isomorphic to the
/// pattern, and `xi >= rho ln ln |B_ell| + q o phi` on `B_R(z)`. The pattern is
/// a rooted tree of radius `R + 1` and `q` is indexed by pattern vertices
/// (entries at depth `R + 1` are ignored).
pub fn scan_high_balls(
    g: &RootedGraph,
    xi: &PotentialField,
    pattern: &RootedGraph,
    q_profile: &[f64],
    ell: usize,
) -> Result<ScanReport> {
    if xi.len() != g.n() {
        return Err(invalid("potential and graph sizes differ"));
    }
    if !pattern.is_tree() || pattern.max_depth() == 0 {
        return Err(invalid("pattern must be a rooted tree of radius at least 1"));
    }
    if q_profile.len() != pattern.n() {
        return Err(invalid("profile must have one entry per pattern vertex"));
    }
    let radius = pattern.max_depth() - 1;
    let inner: Vec<f64> =
        (0..pattern.n()).filter(|&v| pattern.depth(v) <= radius).map(|v| q_profile[v]).collect();
    if (PotentialProfile { q: inner }).l_value(xi.rho) >= 1.0 {
        return Err(invalid("profile must satisfy L(q) < 1"));
    }
    let big = graph::ball(g, g.root(), ell)?;
    if big.len() < 2 {
        return Err(Error::Domain("ball too small for ln ln |B|".into()));
    }
    let threshold = xi.rho * (big.len() as f64).ln().ln();
    let candidates: Vec<(usize, graph::BallView)> = big
        .vertices()
        .iter()
        .filter_map(|&z| {
            let b = graph::ball(g, z, radius + 1).ok()?;
            b.vertices().iter().all(|&v| big.contains(v)).then_some((z, b))
        })
        .collect();
    let found: Vec<Option<(ScanHit, bool)>> = candidates
        .par_iter()
        .map(|(z, b)| {
            let local = b.to_graph(g);
            let allowed = |a: usize, p: usize| {
                pattern.depth(p) > radius || xi.values[b.vertices()[a]] >= threshold + q_profile[p]
            };
            let map = graph::constrained_isomorphism(&local, pattern, &allowed).ok()??;
            let witness: Vec<(usize, usize)> = map.iter().enumerate().map(|(a, &p)| (b.vertices()[a], p)).collect();
            let ok = verify_witness(g, &xi.values, pattern, q_profile, radius, threshold, *z, &witness);
            Some((ScanHit { z: *z, depth: big.distance_at(big.local_index(*z).unwrap()), witness }, ok))
        })
        .collect();
    let mut hits = Vec::new();
    let mut rejected = 0;
    for (hit, ok) in found.into_iter().flatten() {
        if ok {
            hits.push(hit);
        } else {
            rejected += 1;
        }
    }
    let min_depth = hits.iter().map(|h| h.depth).min();
    Ok(ScanReport { ell, ball_size: big.len(), threshold, candidates: candidates.len(), hits, min_depth, rejected })
}

/// Products of inverse degrees along root paths to generation `L`.
#[derive(Debug, Clone, Serialize)]
pub struct DegreeProductReport {
    pub generation: usize,
    pub vertices: usize,
    /// `min_z sum_{i=1}^L ln(1/deg(v_{z,i}))`.
    pub min_log_product: f64,
    pub max_log_product: f64,
    pub delta: Option<f64>,
    /// `-delta L ln ln L`, when defined.
    pub log_threshold: Option<f64>,
    /// Vertices with product above the threshold.
    pub pass_count: usize,
    pub fail_count: usize,
}

/// Evaluates `prod_{i=1}^L 1/deg(v_{z,i})` for every vertex `z` of generation
/// `L` against `(ln L)^{-delta L}`; `delta` defaults to `1/ln ln L`. The
/// threshold is undefined for `L <= 2`, where all vertices are counted as passing.
pub fn degree_product_diagnostic(g: &RootedGraph, generation: usize, delta: Option<f64>) -> Result<DegreeProductReport> {
    if generation == 0 {
        return Err(invalid("generation must be at least 1"));
    }
    if g.max_depth() <= generation {
        return Err(Error::Domain(format!(
            "generation {} needs the next generation for true degrees (depth {})",
            generation,
            g.max_depth()
        )));
    }
    let mut parent = vec![usize::MAX; g.n()];
    let order = {
        let mut order = vec![g.root()];
        let mut head = 0;
        parent[g.root()] = g.root();
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &v in g.neighbors(u) {
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    order.push(v);
                }
            }
        }
        order
    };
    let mut log_prod = vec![0.0; g.n()];
    for &v in &order[1..] {
        log_prod[v] = log_prod[parent[v]] - (g.degree(v) as f64).ln();
    }
    let gen: Vec<usize> = (0..g.n()).filter(|&v| g.depth(v) == generation).collect();
    let l = generation as f64;
    let llog = l.ln().ln();
    let delta = delta.or_else(|| (llog > 0.0).then(|| 1.0 / llog));
    let log_threshold = match delta {
        Some(d) if llog.is_finite() && l.ln() > 0.0 => Some(-d * l * l.ln().ln()),
        _ => None,
    };
    let pass_count = gen.iter().filter(|&&v| log_threshold.is_none_or(|th| log_prod[v] > th)).count();
    Ok(DegreeProductReport {
        generation,
        vertices: gen.len(),
        min_log_product: gen.iter().map(|&v| log_prod[v]).fold(f64::INFINITY, f64::min),
        max_log_product: gen.iter().map(|&v| log_prod[v]).fold(f64::NEG_INFINITY, f64::max),
        delta,
        log_threshold,
        pass_count,
        fail_count: gen.len() - pass_count,
    })
}

/// Source of `tilde chi(rho)` for predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ChiTildeSource {
    /// A known value with its uncertainty.
    Given { value: f64, gap: f64 },
    /// Balls of these radii in `T_{d_min}`.
    Estimate { radii: Vec<usize> },
}

/// How `U(t)` is evaluated on the window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Estimator {
    Exact,
    MonteCarlo { min_samples: usize, cap: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticsConfig {
    pub rho: f64,
    pub law: OffspringLaw,
    /// Volume growth rate in the prediction; `ln E[D]` when absent.
    pub theta: Option<f64>,
    pub times: Vec<f64>,
    /// Window radius target is `margin * r_t`.
    pub margin: f64,
    /// Hard cap on the window radius.
    pub max_radius: usize,
    pub estimator: Estimator,
    pub chi_tilde: ChiTildeSource,
    /// Flag rows whose one-layer truncation effect on the proxy exceeds this.
    pub boundary_cap: f64,
    /// Zero potential, no prediction.
    pub control: bool,
    pub seed: u64,
}

impl AsymptoticsConfig {
    pub fn new(rho: f64, law: OffspringLaw, times: Vec<f64>, seed: u64) -> Self {
        Self {
            rho,
            law,
            theta: None,
            times,
            margin: 3.0,
            max_radius: 12,
            estimator: Estimator::Exact,
            chi_tilde: ChiTildeSource::Estimate { radii: vec![3, 4, 5] },
            boundary_cap: 0.05,
            control: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        check_positive("rho", self.rho)?;
        check_positive("margin", self.margin)?;
        if self.times.is_empty() || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("times must be non-empty and increasing"));
        }
        if self.max_radius < 2 {
            return Err(invalid("max_radius must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendRow {
    pub t: f64,
    /// `ln U(t) / t` on the window around the root.
    pub lyapunov_proxy: f64,
    pub predicted: Option<f64>,
    pub residual: Option<f64>,
    pub se: f64,
    pub radius: usize,
    pub window_size: usize,
    /// Half width of the prediction band: truncation gap + 3 se + 1.
    pub band: f64,
    pub max_potential: f64,
    /// `a_{L_R} + 2 rho ln R / (theta R)` for the window radius `R`.
    pub max_potential_bound: f64,
    pub lambda: f64,
    /// Proxy change from shrinking the window by one layer.
    pub boundary_effect: f64,
    pub boundary_flag: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendTable {
    pub config: AsymptoticsConfig,
    pub theta: f64,
    pub chi_tilde: f64,
    pub chi_tilde_gap: f64,
    pub rows: Vec<TrendRow>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl TrendTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,lyapunov_proxy,predicted,residual,se\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.t, r.lyapunov_proxy, opt(r.predicted), opt(r.residual), r.se);
        }
        s
    }
}

fn chi_tilde_value(src: &ChiTildeSource, d: usize, rho: f64) -> Result<(f64, f64)> {
    match src {
        ChiTildeSource::Given { value, gap } => Ok((*value, *gap)),
        ChiTildeSource::Estimate { radii } => {
            let rep = variational::chi_tilde_estimate(d, rho, radii, &ChiOptions::default())?;
            Ok((rep.estimate, rep.truncation_gap))
        }
    }
}

fn log_mass(window: &DirichletWindow, xi: &[f64], t: f64, est: Estimator, seed: u64) -> Result<(f64, f64)> {
    let root = window.graph().root();
    match est {
        Estimator::Exact => Ok((evolver::log_total_mass(window, xi, root, t)?, 0.0)),
        Estimator::MonteCarlo { min_samples, cap } => {
            let e = walker::fk_total_mass_adaptive(window, xi, root, t, min_samples, cap, seed)?;
            Ok((e.estimate.ln(), e.std_error / e.estimate))
        }
    }
}

/// Growth-rate trend: one landscape, window radius `min(margin r_t, max_radius)`,
/// proxy `ln U(t)/t` against `rho ln(theta r_t) - rho - tilde chi`.
pub fn theorem1_trend(config: &AsymptoticsConfig) -> Result<TrendTable> {
    config.validate()?;
    let rho = config.rho;
    let theta = config.theta.unwrap_or_else(|| config.law.theta());
    let (chi_tilde, gap) = if config.control {
        (f64::NAN, 0.0)
    } else {
        chi_tilde_value(&config.chi_tilde, config.law.d_min(), rho)?
    };
    let radii: Vec<usize> = config
        .times
        .iter()
        .map(|&t| {
            let target = (config.margin * r_frak(t, rho)?).ceil();
            Ok((target as usize).clamp(2, config.max_radius))
        })
        .collect::<Result<_>>()?;
    let depth = radii.iter().copied().max().unwrap() + 1;
    let tree = graph::sample_gw_tree(&config.law, depth, config.seed);
    let xi: Vec<f64> = if config.control {
        vec![0.0; tree.n()]
    } else {
        potential::sample_potential(&tree, rho, config.seed)?.values
    };
    let rows = config
        .times
        .par_iter()
        .zip(&radii)
        .enumerate()
        .map(|(i, (&t, &radius))| {
            let seed = rng::child_seed(config.seed, i as u64);
            let b = graph::ball(&tree, tree.root(), radius)?;
            let window = DirichletWindow::from_ball(&tree, &b)?;
            let (lm, se_log) = log_mass(&window, &xi, t, config.estimator, seed)?;
            let inner = DirichletWindow::from_ball(&tree, &graph::ball(&tree, tree.root(), radius - 1)?)?;
            let (lm_inner, _) = log_mass(&inner, &xi, t, Estimator::Exact, seed)?;
            let proxy = lm / t;
            let se = se_log / t;
            let boundary_effect = (lm - lm_inner) / t;
            let predicted =
                if config.control { None } else { Some(u_star_log(t, rho, theta, chi_tilde)?) };
            let max_potential = b.vertices().iter().map(|&v| xi[v]).fold(f64::NEG_INFINITY, f64::max);
            let r = radius as f64;
            let max_potential_bound = potential::a_scale(b.len() as f64, rho)? + 2.0 * rho * r.ln() / (theta * r);
            let lambda = spectral::principal_eigenpair(&window, &xi)?.lambda;
            Ok(TrendRow {
                t,
                lyapunov_proxy: proxy,
                predicted,
                residual: predicted.map(|p| proxy - p),
                se,
                radius,
                window_size: b.len(),
                band: gap + 3.0 * se + 1.0,
                max_potential,
                max_potential_bound,
                lambda,
                boundary_effect,
                boundary_flag: boundary_effect > config.boundary_cap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrendTable { config: config.clone(), theta, chi_tilde, chi_tilde_gap: gap, rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingConfig {
    pub law: OffspringLaw,
    pub rho_grid: Vec<f64>,
    pub samples: usize,
    pub protocol: CompletionProtocol,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingRow {
    pub rho: f64,
    pub chi_tdmin: f64,
    pub min_samples: f64,
    pub max_samples: f64,
    pub above_threshold: bool,
    pub report: variational::OrderingReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingTable {
    pub config: OrderingConfig,
    pub rows: Vec<OrderingRow>,
}

impl OrderingTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rho,chi_Tdmin,min,max,threshold_flag\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.rho,
                r.chi_tdmin,
                r.min_samples,
                r.max_samples,
                u8::from(r.above_threshold)
            );
        }
        s
    }
}

/// Minimal-tree ordering across a grid of `rho`: the completed ball of
/// `T_{d_min}` against GW samples completed the same way.
pub fn theorem2_experiment(config: &OrderingConfig) -> Result<OrderingTable> {
    let d_min = config.law.d_min();
    if config.protocol.d != d_min {
        return Err(invalid("protocol degree must equal the minimal degree of the law"));
    }
    let trees: Vec<RootedGraph> = (0..config.samples)
        .map(|i| graph::sample_gw_tree(&config.law, config.protocol.r, rng::child_seed(config.seed, i as u64)))
        .collect();
    let opts = ChiOptions { seed: config.seed, ..ChiOptions::default() };
    let rows = config
        .rho_grid
        .iter()
        .map(|&rho| {
            let report = variational::minimal_tree_ordering(d_min, rho, &trees, config.protocol, &opts)?;
            let min = report.chi_samples.iter().copied().fold(f64::INFINITY, f64::min);
            let max = report.chi_samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(OrderingRow {
                rho,
                chi_tdmin: report.chi_regular,
                min_samples: min,
                max_samples: max,
                above_threshold: report.above_threshold,
                report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(OrderingTable { config: config.clone(), rows })
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory, or as given for inputs.
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of_file(path: &Path, label: &str) -> Result<Self> {
        Ok(Self { path: label.to_string(), sha256: sha256_hex(&std::fs::read(path)?) })
    }
}

/// Everything needed to rerun an experiment and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Command line arguments after the program name, without output flags.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(args: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            tool: "pamtree".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            args,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Outputs under `dir` whose digest differs from the recorded one.
    pub fn mismatches(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for o in &self.outputs {
            let p = dir.join(&o.path);
            let ok = p.exists() && FileDigest::of_file(&p, &o.path)?.sha256 == o.sha256;
            if !ok {
                bad.push(o.path.clone());
            }
        }
        Ok(bad)
    }
}
