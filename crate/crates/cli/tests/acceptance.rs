//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the lines are always printed; exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use graph_diffusion::assembler::{assemble_recursive, assemble_star};
use graph_diffusion::clock::{allocate, level_grid, no_simultaneous_flat_check, FlatReport};
use graph_diffusion::config::GraphConfig;
use graph_diffusion::edge::{local_time_kernel, simulate_reflected_edge, LocalTimeLedger, SimConfig};
use graph_diffusion::graph::{EdgeId, GraphPoint, MetricGraph, VertexId};
use graph_diffusion::rng::NormalStream;
use graph_diffusion::verify::{
    bm_samples, exit_direction_experiment, generator_check, marginal_law_test, run_invariant_suite,
    simulate_marginal, skew_bm_samples, GeneratorProbe, TestFunction,
};

const DT: f64 = 1e-5;
/// Pinned tolerances.
const EXIT_TOL: f64 = 0.02;
const KS_TOL: f64 = 0.02;
const SIGN_TOL: f64 = 0.015;
const GENERATOR_SE: f64 = 3.0;
const PATHS: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn graph(name: &str) -> MetricGraph {
    GraphConfig::load(config(name)).and_then(|c| c.to_graph()).expect("shipped config loads")
}

fn sim(horizon: f64) -> SimConfig {
    SimConfig { dt: DT, horizon, ..SimConfig::default() }
}

fn exit_law() -> Outcome {
    let g = graph("star3.toml");
    let r = exit_direction_experiment(&g, VertexId(0), 0.05, PATHS, &sim(1.0)).expect("exit experiment");
    let dev = r.max_deviation();
    Outcome {
        pass: dev < EXIT_TOL && r.unexited == 0,
        detail: format!("freq {:.4?} vs alpha {:?}; max |f - a| = {dev:.4} (< {EXIT_TOL})", r.frequencies, r.weights),
    }
}

fn ks_against(g: &MetricGraph, oracle: &[f64]) -> (f64, f64) {
    let root = g.default_root().expect("root");
    let samples = simulate_marginal(g, root, PATHS, &sim(1.0)).expect("marginal");
    let r = marginal_law_test(&samples, oracle, KS_TOL);
    (r.statistic, r.positive_fraction)
}

fn standard_bm() -> Outcome {
    let (ks, _) = ks_against(&graph("star2_equal.toml"), &bm_samples(1.0, PATHS, 1));
    Outcome { pass: ks < KS_TOL, detail: format!("KS = {ks:.4} (< {KS_TOL}), 1e4 vs 1e4 at t = 1") }
}

fn skew_bm() -> Outcome {
    let (ks, pos) = ks_against(&graph("skew07.toml"), &skew_bm_samples(0.7, 1.0, PATHS, 1000, 2));
    Outcome {
        pass: ks < KS_TOL && (pos - 0.7).abs() <= SIGN_TOL,
        detail: format!("KS = {ks:.4} (< {KS_TOL}); positive fraction {pos:.4} (0.7 ± {SIGN_TOL})"),
    }
}

fn equation_system() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["star3.toml", "h_tree.toml"] {
        let g = graph(name);
        let r = run_invariant_suite(&g, VertexId(0), &sim(1.0), 4, None).expect("suite");
        for c in &r.checks {
            if ["budget", "clock", "equation-residual", "allocate-vs-solve"].contains(&c.name.as_str()) {
                pass &= c.pass;
                if c.name == "equation-residual" || c.name == "allocate-vs-solve" {
                    parts.push(format!("{name} {} {:.5} <= {:.5}", c.name, c.value, c.threshold));
                } else if !c.pass {
                    parts.push(format!("{name} {} failed: {}", c.name, c.detail));
                }
                if c.name == "allocate-vs-solve" {
                    parts.push(c.detail.split("; ").last().unwrap_or("").to_string());
                }
            }
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn flat_fraction(dt: f64, duplicate: bool) -> FlatReport {
    let g = graph("star3.toml");
    let e1 = g.edge(EdgeId(1)).unwrap();
    let cfg = SimConfig { dt, ..SimConfig::default() };
    let w = [0.5, 0.5];
    let reports: Vec<FlatReport> = (0..1000u64)
        .map(|r| {
            let ledger = |edge: u32| -> LocalTimeLedger {
                let p = simulate_reflected_edge(e1, 0.0, &cfg, NormalStream::new(cfg.seed, r, EdgeId(edge))).unwrap();
                LocalTimeLedger { edge: EdgeId(edge), ..local_time_kernel(&p, 0.0, cfg.kernel_eps) }
            };
            let a = ledger(1);
            let b = if duplicate { LocalTimeLedger { edge: EdgeId(2), ..a.clone() } } else { ledger(2) };
            let ls = [a, b];
            no_simultaneous_flat_check(&ls, &w, &level_grid(&ls, &w, 200))
        })
        .collect();
    FlatReport::merge(&reports)
}

fn no_simultaneous_flat() -> Outcome {
    let fractions: Vec<f64> = [1e-3, 1e-4, 1e-5].iter().map(|&dt| flat_fraction(dt, false).fraction).collect();
    let control = flat_fraction(1e-4, true).fraction;
    let decreasing = fractions.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: decreasing && control > 0.99,
        detail: format!(
            "fraction at dt = 1e-3, 1e-4, 1e-5: {:.4?}; duplicated-path control {control:.4}",
            fractions
        ),
    }
}

fn generator() -> Outcome {
    let g = graph("star3.toml");
    let v = VertexId(0);
    let f = TestFunction::admissible_at(&g, v, &[1.0, -1.0, 1.0], 0.0, 1.0, (0.25, 0.5)).expect("admissible");
    let probe = GeneratorProbe::new(&g, f, GraphPoint::new(EdgeId(1), 0.0), vec![0.01]);
    let r = generator_check(&g, &probe, 100_000, &sim(0.01)).expect("generator");
    let (est, se) = (r.estimates[0], r.std_errors[0]);
    Outcome {
        pass: r.within(GENERATOR_SE),
        detail: format!("estimate {est:.4} ± {se:.4} vs target {} ({GENERATOR_SE} SE)", r.target),
    }
}

fn recursive_assembly() -> Outcome {
    let g = graph("star3.toml");
    let center = VertexId(0);
    let cfg = SimConfig { dt: DT, horizon: 0.2, seed: 5, ..SimConfig::default() };
    let mut identical = true;
    for replica in 0..5 {
        let edges = g.incident_edges(center);
        let (mut paths, mut ledgers) = (Vec::new(), Vec::new());
        for &e in &edges {
            let spec = g.edge(e).unwrap();
            let x0 = spec.vertex_coord(center).unwrap();
            let p = simulate_reflected_edge(spec, x0, &cfg, NormalStream::new(cfg.seed, replica, e)).unwrap();
            ledgers.push(local_time_kernel(&p, x0, cfg.kernel_eps).at_vertex(center));
            paths.push(p);
        }
        let w: Vec<f64> = edges.iter().map(|&e| g.weight(center, e)).collect();
        let tc = allocate(&ledgers, &w, cfg.horizon, cfg.quantum).unwrap();
        let offline = assemble_star(&paths, &tc, &g, &cfg).unwrap();
        let online = assemble_recursive(&g, center, &cfg, replica).unwrap();
        identical &= online.points.len() == offline.points.len()
            && online.points.iter().zip(&offline.points).all(|(a, b)| a.edge == b.edge && a.coord.to_bits() == b.coord.to_bits())
            && online.time_change == offline.time_change;
    }
    let (ks, _) = ks_against(&graph("path3.toml"), &bm_samples(1.0, PATHS, 3));
    Outcome {
        pass: identical && ks < KS_TOL,
        detail: format!("star online vs offline bit-identical: {identical}; path graph KS = {ks:.4} (< {KS_TOL})"),
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let gdiff = env!("CARGO_BIN_EXE_gdiff");
    let tmp = tempfile::tempdir().unwrap();
    let runs: [(&str, &str, &[&str]); 3] = [
        ("simulate", "h_tree.toml", &["--horizon", "0.05", "--paths", "3"]),
        ("exit-prob", "star3.toml", &["--paths", "300", "--delta", "0.05"]),
        ("verify", "skew07.toml", &["--horizon", "0.05", "--paths", "50", "--suite-paths", "2"]),
    ];
    let mut bad = Vec::new();
    for (cmd, cfg, extra) in runs {
        let out = tmp.path().join(cmd);
        let status = Command::new(gdiff)
            .args([cmd, "--graph", config(cfg).to_str().unwrap(), "--dt", "1e-4", "--seed", "3", "--out"])
            .arg(&out)
            .args(extra)
            .output()
            .unwrap()
            .status;
        let first = snapshot(&out);
        let replay = Command::new(gdiff).args(["replay", "--manifest"]).arg(out.join("manifest.json")).output().unwrap();
        if status.code() != replay.status.code() || snapshot(&out) != first || first.len() < 3 {
            bad.push(cmd);
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            "simulate, exit-prob and verify replay byte-identically from their manifests".into()
        } else {
            format!("replay differs for {bad:?}")
        },
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 exit-direction law", exit_law),
        ("2 standard-BM oracle", standard_bm),
        ("3 skew-BM oracle", skew_bm),
        ("4 time-change equations", equation_system),
        ("5 no simultaneous flats", no_simultaneous_flat),
        ("6 generator at the vertex", generator),
        ("7 recursive assembly", recursive_assembly),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!("{} {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
}
