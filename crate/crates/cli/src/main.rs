use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pamtree::evolver::{self, Method};
use pamtree::graph::{self, OffspringLaw, RootedGraph};
use pamtree::harness::{self, AsymptoticsConfig, ChiTildeSource, Estimator, FileDigest, OrderingConfig, RunManifest};
use pamtree::potential::{self, DiagnosticsParams, PotentialField};
use pamtree::spectral::{self, DirichletWindow};
use pamtree::variational::{self, ChiOptions, CompletionProtocol, DualOptions};
use pamtree::walker;

/// Worker threads for the parallel pools; defaults to all cores.
const THREADS_ENV: &str = "PAMTREE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "pamtree", version, about = "Parabolic Anderson model on Galton-Watson trees")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory receiving the output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Write a run manifest to this path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// File name of the primary output inside the output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
enum Command {
    /// Sample a Galton-Watson tree or build a regular tree.
    Sample(SampleArgs),
    /// Sample a double-exponential potential on a tree.
    Potential(PotentialArgs),
    /// Principal eigenpair (and optionally the full spectrum) on a window.
    Spectrum(SpectrumArgs),
    /// Characteristic variational value on a window.
    Chi(ChiArgs),
    /// Feynman-Kac Monte Carlo estimate of the total mass.
    Fk(FkArgs),
    /// Exact kernel row and total mass on a window.
    Evolve(EvolveArgs),
    /// Experiment harnesses.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Rerun a manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
enum Experiment {
    /// Growth-rate trend against the predicted exponent.
    T1Trend(TrendArgs),
    /// Minimal-tree ordering across a grid of rho.
    T2Order(OrderArgs),
    /// Maximiser of F_{c,t} over a grid of (c, t).
    FMax(FMaxArgs),
    /// High-exceedance ball scanner.
    Scan(ScanArgs),
    /// Potential and degree diagnostics on one sample.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SampleArgs {
    /// Degree law: `3`, `2,3` (uniform) or `2:0.4,3:0.6`.
    #[arg(long, default_value = "2,3")]
    law: String,
    #[arg(long, default_value_t = 8)]
    depth: usize,
    /// Build the regular tree of this degree instead of sampling.
    #[arg(long)]
    regular: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PotentialArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SpectrumArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    /// `all`, `ball:R` or `ball:R@V`.
    #[arg(long, default_value = "all")]
    window: String,
    /// Number of leading eigenvalues to report.
    #[arg(long, default_value_t = 1)]
    top: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ChiArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value = "all")]
    window: String,
    /// `direct`, `dual` or `both`.
    #[arg(long, default_value = "direct")]
    mode: String,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct FkArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    #[arg(long, default_value = "all")]
    window: String,
    #[arg(long, default_value_t = 0)]
    y: usize,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EvolveArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    #[arg(long, default_value = "all")]
    window: String,
    #[arg(long, default_value_t = 0)]
    y: usize,
    #[arg(long)]
    t: f64,
    /// `uniformization`, `rk` or `spectral`.
    #[arg(long, default_value = "uniformization")]
    method: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrendArgs {
    #[arg(long, default_value_t = 2.0)]
    rho: f64,
    #[arg(long, default_value = "3")]
    law: String,
    /// Comma-separated times.
    #[arg(long, default_value = "10,20,40")]
    times: String,
    #[arg(long, default_value_t = 12)]
    max_radius: usize,
    #[arg(long, default_value_t = 3.0)]
    margin: f64,
    /// Monte Carlo samples per row; exact evolution when absent.
    #[arg(long)]
    mc: Option<usize>,
    /// Radii of the balls used to estimate tilde chi.
    #[arg(long, default_value = "3,4,5")]
    chi_radii: String,
    /// Override the volume growth rate.
    #[arg(long)]
    theta: Option<f64>,
    /// Zero potential, no prediction.
    #[arg(long)]
    control: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct OrderArgs {
    #[arg(long, default_value = "3,4")]
    law: String,
    #[arg(long, default_value = "0.25,0.5,1,2")]
    rho_grid: String,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    copy_depth: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct FMaxArgs {
    #[arg(long, default_value = "0,1")]
    c: String,
    #[arg(long, default_value = "1e6,1e8")]
    t: String,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ScanArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    /// Rooted pattern tree (JSON) of radius R + 1.
    #[arg(long)]
    pattern: PathBuf,
    /// JSON array of profile values, one per pattern vertex.
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    ell: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct DiagnosticsArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Generation for the degree-product diagnostic; `r` when absent.
    #[arg(long)]
    generation: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ReplayArgs {
    /// Manifest to replay.
    path: PathBuf,
}

/// What a manifest records about a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunSpec {
    seed: u64,
    out: Option<String>,
    command: Command,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',').map(|x| x.trim().parse::<T>().with_context(|| format!("bad list entry {x:?}"))).collect()
}

fn parse_law(s: &str) -> Result<OffspringLaw> {
    if s.contains(':') {
        let support = s
            .split(',')
            .map(|e| {
                let (d, p) = e.split_once(':').context("expected degree:probability")?;
                Ok((d.trim().parse()?, p.trim().parse()?))
            })
            .collect::<Result<Vec<(usize, f64)>>>()?;
        Ok(OffspringLaw::new(support)?)
    } else {
        let degrees: Vec<usize> = parse_list(s)?;
        match degrees.as_slice() {
            [d] => Ok(OffspringLaw::constant(*d)?),
            _ => Ok(OffspringLaw::uniform(&degrees)?),
        }
    }
}

fn window_vertices(g: &RootedGraph, spec: &str) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..g.n()).collect());
    }
    let rest = spec.strip_prefix("ball:").with_context(|| format!("window must be `all` or `ball:R[@V]`, got {spec}"))?;
    let (r, center) = match rest.split_once('@') {
        Some((r, v)) => (r.parse()?, v.parse()?),
        None => (rest.parse()?, g.root()),
    };
    Ok(graph::ball(g, center, r)?.vertices().to_vec())
}

struct Io {
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Io {
    fn read(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: harness::sha256_hex(text.as_bytes()) });
        Ok(text)
    }

    fn tree(&mut self, path: &Path) -> Result<RootedGraph> {
        Ok(RootedGraph::from_json(&self.read(path)?)?)
    }

    fn potential(&mut self, path: &Path, g: &RootedGraph) -> Result<PotentialField> {
        let xi: PotentialField = serde_json::from_str(&self.read(path)?)?;
        if xi.len() != g.n() {
            bail!("potential has {} values for {} vertices", xi.len(), g.n());
        }
        Ok(xi)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(FileDigest { path: name.to_string(), sha256: harness::sha256_hex(contents.as_bytes()) });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<String> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, &text)?;
        Ok(text)
    }
}

#[derive(Serialize)]
struct SpectrumOut {
    vertices: Vec<usize>,
    lambda: Vec<f64>,
    phi1: Vec<f64>,
}

#[derive(Serialize)]
struct ChiOut {
    direct: Option<variational::ChiResult>,
    dual: Option<variational::ChiResult>,
}

#[derive(Serialize)]
struct FkOut {
    estimate: f64,
    se: f64,
    n: u64,
}

#[derive(Serialize)]
struct EvolveOut {
    vertices: Vec<usize>,
    u: Vec<f64>,
    total_mass: f64,
}

#[derive(Serialize)]
struct DiagnosticsOut {
    potential: potential::DiagnosticsReport,
    degree_product: harness::DegreeProductReport,
}

fn execute(spec: &RunSpec, io: &mut Io) -> Result<()> {
    let seed = spec.seed;
    let out = spec.out.as_deref();
    match &spec.command {
        Command::Sample(a) => {
            let g = match a.regular {
                Some(d) => graph::regular_tree(d, a.depth)?,
                None => graph::sample_gw_tree(&parse_law(&a.law)?, a.depth, seed),
            };
            io.write(out.unwrap_or("tree.json"), &(g.to_json()? + "\n"))?;
            println!("tree: {} vertices, depth {}", g.n(), g.max_depth());
        }
        Command::Potential(a) => {
            let g = io.tree(&a.tree)?;
            let xi = potential::sample_potential(&g, a.rho, seed)?;
            io.write_json(out.unwrap_or("potential.json"), &xi)?;
            println!("potential: {} values, max {:.6}", xi.len(), xi.max_over(&(0..g.n()).collect::<Vec<_>>()));
        }
        Command::Spectrum(a) => {
            let g = io.tree(&a.tree)?;
            let xi = io.potential(&a.potential, &g)?;
            let w = DirichletWindow::new(&g, &window_vertices(&g, &a.window)?)?;
            let pair = spectral::principal_eigenpair(&w, &xi.values)?;
            let lambda = if a.top > 1 {
                spectral::full_spectrum(&w, &xi.values)?.values.into_iter().take(a.top).collect()
            } else {
                vec![pair.lambda]
            };
            println!("lambda = {}", pair.lambda);
            io.write_json(out.unwrap_or("spectrum.json"), &SpectrumOut { vertices: w.vertices().to_vec(), lambda, phi1: pair.phi })?;
        }
        Command::Chi(a) => {
            let g = io.tree(&a.tree)?;
            let w = DirichletWindow::new(&g, &window_vertices(&g, &a.window)?)?;
            let (want_direct, want_dual) = match a.mode.as_str() {
                "direct" => (true, false),
                "dual" => (false, true),
                "both" => (true, true),
                m => bail!("unknown mode {m}"),
            };
            let opts = ChiOptions { seed, restarts: a.restarts, ..ChiOptions::default() };
            let direct = if want_direct { Some(variational::chi_window(&w, a.rho, &opts)?) } else { None };
            let dual = if want_dual { Some(variational::chi_dual_window(&w, a.rho, &DualOptions::default())?) } else { None };
            for (name, r) in [("direct", &direct), ("dual", &dual)] {
                if let Some(r) = r {
                    println!("chi ({name}) = {}", r.value);
                }
            }
            io.write_json(out.unwrap_or("chi.json"), &ChiOut { direct, dual })?;
        }
        Command::Fk(a) => {
            let g = io.tree(&a.tree)?;
            let xi = io.potential(&a.potential, &g)?;
            let w = DirichletWindow::new(&g, &window_vertices(&g, &a.window)?)?;
            let e = walker::fk_total_mass_mc(&w, &xi.values, a.y, a.t, a.n, seed)?;
            print!("{}", io.write_json(out.unwrap_or("fk.json"), &FkOut { estimate: e.estimate, se: e.std_error, n: e.n })?);
        }
        Command::Evolve(a) => {
            let g = io.tree(&a.tree)?;
            let xi = io.potential(&a.potential, &g)?;
            let w = DirichletWindow::new(&g, &window_vertices(&g, &a.window)?)?;
            let method = match a.method.as_str() {
                "uniformization" => Method::Uniformization,
                "rk" => Method::RungeKutta,
                "spectral" => Method::Spectral,
                m => bail!("unknown method {m}"),
            };
            let u = evolver::evolve(&w, &xi.values, a.y, a.t, method)?;
            let total_mass = evolver::total_mass(&w, &xi.values, a.y, a.t, method)?;
            io.write_json(out.unwrap_or("evolve.json"), &EvolveOut { vertices: w.vertices().to_vec(), u, total_mass })?;
            println!("total mass = {total_mass}");
        }
        Command::Experiment(e) => run_experiment(e, seed, io)?,
        Command::Replay(_) => bail!("replay cannot be recorded in a manifest"),
    }
    Ok(())
}

fn run_experiment(e: &Experiment, seed: u64, io: &mut Io) -> Result<()> {
    match e {
        Experiment::T1Trend(a) => {
            let mut cfg = AsymptoticsConfig::new(a.rho, parse_law(&a.law)?, parse_list(&a.times)?, seed);
            cfg.max_radius = a.max_radius;
            cfg.margin = a.margin;
            cfg.theta = a.theta;
            cfg.control = a.control;
            cfg.chi_tilde = ChiTildeSource::Estimate { radii: parse_list(&a.chi_radii)? };
            if let Some(n) = a.mc {
                cfg.estimator = Estimator::MonteCarlo { min_samples: n, cap: 16 * n };
            }
            let table = harness::theorem1_trend(&cfg)?;
            let csv = table.to_csv();
            io.write("t1_trend.csv", &csv)?;
            io.write_json("t1_trend.json", &table)?;
            print!("{csv}");
        }
        Experiment::T2Order(a) => {
            let law = parse_law(&a.law)?;
            let protocol = CompletionProtocol { r: a.r, d: law.d_min(), copy_depth: a.copy_depth };
            let cfg = OrderingConfig { law, rho_grid: parse_list(&a.rho_grid)?, samples: a.samples, protocol, seed };
            let table = harness::theorem2_experiment(&cfg)?;
            let csv = table.to_csv();
            io.write("t2_order.csv", &csv)?;
            io.write_json("t2_order.json", &table)?;
            print!("{csv}");
        }
        Experiment::FMax(a) => {
            let table = harness::f_max_table(&parse_list(&a.c)?, &parse_list(&a.t)?, a.rho, a.theta)?;
            let csv = table.to_csv();
            io.write("f_max.csv", &csv)?;
            io.write_json("f_max.json", &table)?;
            print!("{csv}");
        }
        Experiment::Scan(a) => {
            let g = io.tree(&a.tree)?;
            let xi = io.potential(&a.potential, &g)?;
            let pattern = io.tree(&a.pattern)?;
            let q: Vec<f64> = serde_json::from_str(&io.read(&a.profile)?)?;
            let rep = harness::scan_high_balls(&g, &xi, &pattern, &q, a.ell)?;
            io.write_json("scan.json", &rep)?;
            println!("{} hits among {} candidates", rep.hits.len(), rep.candidates);
        }
        Experiment::Diagnostics(a) => {
            let g = io.tree(&a.tree)?;
            let xi = io.potential(&a.potential, &g)?;
            let theta = g.meta().law.as_ref().map(|l| l.theta()).unwrap_or(std::f64::consts::LN_2);
            let params = DiagnosticsParams { seed, ..DiagnosticsParams::default() };
            let pot = potential::diagnostics_suite(&g, &xi, a.r, a.a, a.alpha, theta, &params)?;
            let deg = harness::degree_product_diagnostic(&g, a.generation.unwrap_or(a.r), None)?;
            let failed = pot.items.iter().filter(|d| !d.pass).count();
            io.write_json("diagnostics.json", &DiagnosticsOut { potential: pot, degree_product: deg })?;
            println!("diagnostics written, {failed} potential checks failed");
        }
    }
    Ok(())
}

fn run(spec: &RunSpec, out_dir: &Path, manifest: Option<&Path>, argv: Vec<String>) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut io = Io { out_dir: out_dir.to_path_buf(), inputs: Vec::new(), outputs: Vec::new() };
    let start = Instant::now();
    execute(spec, &mut io)?;
    let mut m = RunManifest::new(argv, serde_json::to_value(spec)?);
    m.inputs = io.inputs;
    m.outputs = io.outputs;
    m.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(path) = manifest {
        fs::write(path, m.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(m)
}

fn replay(path: &Path, out_dir: &Path) -> Result<()> {
    let recorded = RunManifest::from_json(&fs::read_to_string(path)?)?;
    let spec: RunSpec = serde_json::from_value(recorded.config.clone())?;
    for input in &recorded.inputs {
        let now = harness::sha256_hex(&fs::read(&input.path).with_context(|| format!("reading {}", input.path))?);
        if now != input.sha256 {
            bail!("input {} changed since the recorded run", input.path);
        }
    }
    let fresh = run(&spec, out_dir, None, recorded.args.clone())?;
    let mut bad = Vec::new();
    for o in &recorded.outputs {
        match fresh.outputs.iter().find(|f| f.path == o.path) {
            Some(f) if f.sha256 == o.sha256 => println!("identical {}", o.path),
            _ => bad.push(o.path.clone()),
        }
    }
    if !bad.is_empty() {
        bail!("outputs differ: {}", bad.join(", "));
    }
    println!("replay reproduced {} outputs", recorded.outputs.len());
    Ok(())
}

fn main() -> Result<()> {
    if let Ok(n) = std::env::var(THREADS_ENV) {
        let n: usize = n.parse().with_context(|| format!("{THREADS_ENV} must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Replay(a) => replay(&a.path, &cli.out_dir),
        command => {
            let argv = std::env::args().skip(1).collect();
            let spec = RunSpec { seed: cli.seed, out: cli.out, command };
            run(&spec, &cli.out_dir, cli.manifest.as_deref(), argv).map(|_| ())
        }
    }
}
