//! `gdiff`: simulate, probe and verify diffusions on metric graphs.
//!
//! Each run writes its outputs plus `manifest.json` and a copy of the graph
//! config into `--out`; `gdiff replay --manifest` reruns it byte-identically.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use graph_diffusion::assembler::assemble_recursive;
use graph_diffusion::config::GraphConfig;
use graph_diffusion::edge::{SimConfig, DEFAULT_KERNEL_EPS, DEFAULT_QUANTUM};
use graph_diffusion::graph::{validate_graph, GraphPoint, MetricGraph, VertexId};
use graph_diffusion::verify::{
    bm_samples, exit_direction_experiment, generator_check, ks_critical, marginal_law_test, run_invariant_suite,
    simulate_marginal, skew_bm_samples, GeneratorProbe, Report, TestFunction,
};
use graph_diffusion::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const EXIT_PASS: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STARVED: u8 = 3;

const MANIFEST: &str = "manifest.json";
const CONFIG_COPY: &str = "graph.toml";
/// Grid points of the skew-BM oracle's random walk.
const ORACLE_STEPS: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "gdiff", version, about = "Diffusions on metric graphs via time-changed edge processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble graph paths and write them as CSV.
    Simulate(Common),
    /// Estimate exit-direction frequencies at the root vertex.
    ExitProb(Common),
    /// Run the invariant suite, the generator probe and, where an oracle
    /// exists, the marginal-law test.
    Verify(VerifyArgs),
    /// Rerun a recorded command from its manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's own directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args, PartialEq)]
pub struct Common {
    /// Graph config (TOML).
    #[arg(long)]
    pub graph: PathBuf,
    /// Root vertex; defaults to the lowest-id interior vertex.
    #[arg(long)]
    pub root: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub dt: f64,
    #[arg(long, default_value_t = DEFAULT_QUANTUM)]
    pub quantum: f64,
    #[arg(long, default_value_t = DEFAULT_KERNEL_EPS)]
    pub kernel_eps: f64,
    /// exit-prob: exit radius (default 0.05). Otherwise: downcrossing and
    /// adjacency radius (default 2 * kernel-eps).
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args, PartialEq)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Replicas for the invariant suite.
    #[arg(long, default_value_t = 8)]
    pub suite_paths: usize,
    /// Generator probe time step.
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
}

/// Fully resolved parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Config path as given on the command line.
    pub config: PathBuf,
    /// Copy of the config next to the outputs, relative to the manifest.
    pub config_copy: String,
    pub root: u32,
    pub sim: SimConfig,
    pub exit_delta: Option<f64>,
    pub paths: usize,
    pub threads: usize,
    pub suite_paths: Option<usize>,
    pub h: Option<f64>,
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Starved(String),
    Check(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Starved(_) => EXIT_STARVED,
            Failure::Check(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Starved(m) => write!(f, "{m}\nhint: raise --horizon, or --dt if paths stall near a vertex"),
            Failure::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Starved { .. } | Error::Infeasible { .. } | Error::HorizonExhausted { .. } => {
                Failure::Starved(e.to_string())
            }
            Error::Diverged { .. } | Error::Exclusivity { .. } | Error::Discontinuity { .. } | Error::Ambiguous { .. } => {
                Failure::Check(e.to_string())
            }
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn load(path: &Path) -> std::result::Result<(GraphConfig, MetricGraph), Failure> {
    let cfg = GraphConfig::load(path)?;
    let g = cfg.to_graph()?;
    let report = validate_graph(&g);
    if !report.is_ok() {
        return Err(Failure::Config(format!("{}: {report}", path.display())));
    }
    Ok((cfg, g))
}

/// Resolves every default before anything runs.
pub fn resolve(command: &str, c: &Common, verify: Option<&VerifyArgs>, g: &MetricGraph) -> std::result::Result<RunManifest, Failure> {
    let root = match c.root {
        Some(r) => r,
        None => g.default_root().ok_or_else(|| Failure::Config("graph has no vertices".into()))?.0,
    };
    let exit_delta = (command == "exit-prob").then(|| c.delta.unwrap_or(0.05));
    let downcross_delta = if command == "exit-prob" { 2.0 * c.kernel_eps } else { c.delta.unwrap_or(2.0 * c.kernel_eps) };
    let sim = SimConfig {
        dt: c.dt,
        horizon: c.horizon,
        seed: c.seed,
        kernel_eps: c.kernel_eps,
        downcross_delta,
        quantum: c.quantum,
    };
    for w in sim.validate(g.sigma_max())? {
        eprintln!("warning: {w}");
    }
    if c.paths == 0 || c.threads == 0 {
        return Err(Failure::Config("--paths and --threads must be at least 1".into()));
    }
    Ok(RunManifest {
        tool: "gdiff".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: c.graph.clone(),
        config_copy: CONFIG_COPY.into(),
        root,
        sim,
        exit_delta,
        paths: c.paths,
        threads: c.threads,
        suite_paths: verify.map(|v| v.suite_paths),
        h: verify.map(|v| v.h),
        out: c.out.clone(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text)
}

fn prepare_out(m: &RunManifest, config_text: &str) -> io::Result<()> {
    fs::create_dir_all(&m.out)?;
    fs::write(m.out.join(CONFIG_COPY), config_text)?;
    write_json(&m.out.join(MANIFEST), m)
}

fn simulate(m: &RunManifest, g: &MetricGraph) -> Outcome {
    let root = VertexId(m.root);
    let paths: Vec<_> = rayon_map(m.paths, |r| assemble_recursive(g, root, &m.sim, r))?;
    for (r, gp) in paths.iter().enumerate() {
        let (path, clocks) = if m.paths == 1 {
            ("path.csv".to_string(), "clocks.csv".to_string())
        } else {
            (format!("path_{r:05}.csv"), format!("clocks_{r:05}.csv"))
        };
        gp.write_csv(BufWriter::new(fs::File::create(m.out.join(path))?))?;
        gp.time_change.write_csv(BufWriter::new(fs::File::create(m.out.join(clocks))?))?;
    }
    Ok(true)
}

fn rayon_map<T: Send>(
    n: usize,
    f: impl Fn(u64) -> graph_diffusion::Result<T> + Sync + Send,
) -> std::result::Result<Vec<T>, Failure> {
    use rayon::prelude::*;
    Ok((0..n as u64).into_par_iter().map(f).collect::<graph_diffusion::Result<Vec<T>>>()?)
}

fn emit(m: &RunManifest, name: &str, report: &Report) -> io::Result<()> {
    write_json(&m.out.join(name), report)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, report).expect("serializable");
    writeln!(out)
}

fn exit_prob(m: &RunManifest, g: &MetricGraph) -> Outcome {
    let delta = m.exit_delta.expect("resolved");
    let r = exit_direction_experiment(g, VertexId(m.root), delta, m.paths, &m.sim)?;
    let report = r.report(&m.sim);
    emit(m, "exit.json", &report)?;
    Ok(report.pass)
}

/// Oracle for the signed marginal, when one is known: a path-shaped graph
/// of Brownian edges without reflecting ends, glued either at a single
/// vertex (skew BM) or with weight 1/2 everywhere (standard BM).
fn marginal_oracle(g: &MetricGraph, root: VertexId, t: f64, n: usize, seed: u64) -> Option<(String, Vec<f64>)> {
    let bm = |e: &graph_diffusion::graph::EdgeSpec| {
        e.drift.coeffs.iter().all(|&c| c == 0.0) && e.volatility.eval(0.0) == 1.0 && e.volatility.degree() == 0
    };
    let line = g.vertices().iter().all(|&v| g.degree(v) == 2);
    if !line || !g.edges().iter().all(bm) {
        return None;
    }
    let interior = g.interior_vertices();
    let half = g.weights().values().all(|&a| (a - 0.5).abs() < 1e-12);
    // oracle draws use their own seed stream, apart from the simulation's
    let oseed = seed ^ 0x5EED_0F_0AC1E;
    if half {
        Some(("standard-bm".into(), bm_samples(t, n, oseed)))
    } else if interior.len() == 1 {
        let p = g.weight(root, g.incident_edges(root)[0]);
        Some((format!("skew-bm(p = {p})"), skew_bm_samples(p, t, n, ORACLE_STEPS, oseed)))
    } else {
        None
    }
}

fn verify(m: &RunManifest, g: &MetricGraph, fault: Option<graph_diffusion::config::Fault>) -> Outcome {
    let root = VertexId(m.root);
    let mut reports = Vec::new();

    let suite = run_invariant_suite(g, root, &m.sim, m.suite_paths.expect("resolved"), fault)?;
    for name in suite.failed() {
        eprintln!("failed check: {name}");
    }
    reports.push(suite.report(root, &m.sim, fault));

    // admissible probe at the root: alternating raw slopes, unit generator
    let edges = g.incident_edges(root);
    let reach = edges.iter().map(|&e| g.edge(e).map(|s| s.length)).collect::<graph_diffusion::Result<Vec<_>>>()?;
    let r = reach.iter().copied().fold(1.0, f64::min);
    let slopes: Vec<f64> = (0..edges.len()).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let f = TestFunction::admissible_at(g, root, &slopes, 0.0, 1.0, (0.25 * r, 0.5 * r))?;
    let start = GraphPoint::new(edges[0], g.edge(edges[0])?.vertex_coord(root).expect("incident"));
    let probe = GeneratorProbe::new(g, f, start, vec![m.h.expect("resolved")]);
    let gen_sim = SimConfig { horizon: m.h.expect("resolved").max(m.sim.dt), ..m.sim };
    reports.push(generator_check(g, &probe, m.paths.max(2), &gen_sim)?.report(&gen_sim));

    if let Some((name, oracle)) = marginal_oracle(g, root, m.sim.horizon, m.paths, m.sim.seed) {
        let samples = simulate_marginal(g, root, m.paths, &m.sim)?;
        let threshold = ks_critical(samples.len(), oracle.len(), 0.01);
        let mut rep = marginal_law_test(&samples, &oracle, threshold).report(m.sim.horizon, &m.sim);
        rep.params["oracle"] = json!(name);
        reports.push(rep);
    }

    let pass = reports.iter().all(|r| r.pass);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.experiment.as_str()).collect();
    let top = Report {
        experiment: "verify".into(),
        params: json!({ "root": m.root, "fault": fault, "sim": m.sim }),
        statistics: json!({ "reports": reports, "failed": failed }),
        ci: json!({ "level": 0.99 }),
        pass,
    };
    emit(m, "report.json", &top)?;
    Ok(pass)
}

/// Runs a resolved manifest against the config text it refers to.
pub fn execute(m: &RunManifest, config_text: &str) -> Outcome {
    let cfg = GraphConfig::parse(config_text)?;
    let g = cfg.to_graph()?;
    let report = validate_graph(&g);
    if !report.is_ok() {
        return Err(Failure::Config(report.to_string()));
    }
    prepare_out(m, config_text)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.threads)
        .build()
        .map_err(|e| Failure::Config(e.to_string()))?;
    pool.install(|| match m.command.as_str() {
        "simulate" => simulate(m, &g),
        "exit-prob" => exit_prob(m, &g),
        "verify" => verify(m, &g, cfg.fault()),
        other => Err(Failure::Config(format!("unknown command `{other}` in manifest"))),
    })
}

pub fn run(cli: Cli) -> Outcome {
    let (name, common, verify) = match &cli.command {
        Command::Simulate(c) => ("simulate", c, None),
        Command::ExitProb(c) => ("exit-prob", c, None),
        Command::Verify(v) => ("verify", &v.common, Some(v)),
        Command::Replay { manifest, out } => return replay(manifest, out.as_deref()),
    };
    let (_, g) = load(&common.graph)?;
    let m = resolve(name, common, verify, &g)?;
    let text = fs::read_to_string(&common.graph)?;
    execute(&m, &text)
}

fn replay(manifest: &Path, out: Option<&Path>) -> Outcome {
    let text = fs::read_to_string(manifest)?;
    let mut m: RunManifest = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", manifest.display())))?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let config_text = fs::read_to_string(dir.join(&m.config_copy))?;
    m.out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf());
    execute(&m, &config_text)
}
