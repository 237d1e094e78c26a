use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::Report;
use crate::assembler::{
    adjacent, assemble_detailed, check_equations, equation_residuals, estimator_bound, steps_at, vertex_ledgers,
    window_tolerance, Assembly,
};
use crate::clock::{level_grid, no_simultaneous_flat_check, FlatReport};
use crate::config::Fault;
use crate::edge::{LocalTimeLedger, SimConfig};
use crate::error::{Error, Result};
use crate::graph::{MetricGraph, VertexId};

/// Grid times per replica at which the equation system is checked.
const CHECK_TIMES: usize = 20;
/// Levels probed per interior vertex by the simultaneous-flat scan.
const FLAT_LEVELS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Worst observed value.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub n_paths: usize,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn report(&self, root: VertexId, cfg: &SimConfig, fault: Option<Fault>) -> Report {
        Report {
            experiment: "invariant-suite".into(),
            params: json!({
                "root": root, "n_paths": self.n_paths, "dt": cfg.dt, "horizon": cfg.horizon,
                "seed": cfg.seed, "kernel_eps": cfg.kernel_eps, "quantum": cfg.quantum,
                "downcross_delta": cfg.downcross_delta, "fault": fault,
            }),
            statistics: json!({ "checks": self.checks, "failed": self.failed() }),
            ci: json!({}),
            pass: self.pass,
        }
    }
}

#[derive(Default)]
struct Tally {
    budget: usize,
    clock: Vec<String>,
    adjacency: usize,
    assembly: Vec<String>,
    residual: f64,
    residual_excess: f64,
    agreement: f64,
    agreement_excess: f64,
    ambiguous: usize,
    flat: Vec<FlatReport>,
}

fn apply_fault(asm: &mut Assembly, fault: Option<Fault>) {
    if let Some(Fault::ShiftClock) = fault {
        // one leaf clock runs one grid step ahead from mid-horizon on
        let tc = &mut asm.path.time_change;
        let from = tc.len() / 2;
        for v in &mut tc.clocks[0][from..] {
            *v += tc.dt;
        }
    }
}

fn replica(g: &MetricGraph, root: VertexId, cfg: &SimConfig, r: u64, fault: Option<Fault>) -> Result<Tally> {
    let mut t = Tally::default();
    let mut asm = match assemble_detailed(g, root, cfg, r) {
        Ok(a) => a,
        Err(e @ (Error::Exclusivity { .. } | Error::Discontinuity { .. })) => {
            t.assembly.push(format!("replica {r}: {e}"));
            return Ok(t);
        }
        Err(e) => return Err(e),
    };
    apply_fault(&mut asm, fault);
    let tc = &asm.path.time_change;

    for k in 0..tc.len() {
        let used: usize = tc.edges.iter().enumerate().map(|(i, _)| (tc.clocks[i][k] / tc.dt).round() as usize).sum();
        if used != k {
            t.budget += 1;
        }
    }
    t.clock = tc.check().into_iter().map(|m| format!("replica {r}: {m}")).collect();

    let reach = cfg.downcross_delta.max(window_tolerance(g, cfg));
    for w in asm.path.points.windows(2) {
        if !adjacent(g, w[0], w[1], reach)? {
            t.adjacency += 1;
        }
    }

    let ledgers = vertex_ledgers(g, &asm.edge_paths, cfg.kernel_eps)?;
    // interior times only: at the horizon every ledger ends exactly where
    // its clock stopped, and the direct solver has no room left
    let stride = (tc.len() / (CHECK_TIMES + 1)).max(1);
    for k in (stride..tc.len() - 1).step_by(stride).take(CHECK_TIMES) {
        let steps = steps_at(tc, k);
        match equation_residuals(g, &ledgers, &steps) {
            Ok(rs) => {
                for (v, spread) in rs {
                    let bound = cfg.quantum + estimator_bound(g, v, cfg);
                    t.residual = t.residual.max(spread);
                    t.residual_excess = t.residual_excess.max(spread - bound);
                }
            }
            // a clock beyond its own ledger
            Err(Error::Starved { .. }) => t.residual_excess = f64::INFINITY,
            Err(e) => return Err(e),
        }
        match check_equations(g, &asm, &ledgers, k) {
            Ok(c) => {
                let bound = cfg.quantum + estimator_bound(g, root, cfg);
                t.agreement = t.agreement.max(c.agreement);
                t.agreement_excess = t.agreement_excess.max(c.agreement - bound);
            }
            Err(Error::Ambiguous { .. }) => t.ambiguous += 1,
            Err(Error::Starved { .. }) => t.agreement_excess = f64::INFINITY,
            Err(e) => return Err(e),
        }
    }

    for v in g.interior_vertices() {
        let edges = g.incident_edges(v);
        let ls: Vec<LocalTimeLedger> = edges
            .iter()
            .map(|&e| LocalTimeLedger::from_values(e, cfg.dt, ledgers[&(v, e)].clone()).at_vertex(v))
            .collect();
        let w: Vec<f64> = edges.iter().map(|&e| g.weight(v, e)).collect();
        t.flat.push(no_simultaneous_flat_check(&ls, &w, &level_grid(&ls, &w, FLAT_LEVELS)));
    }
    Ok(t)
}

/// Assembles `n_paths` replicas and checks the invariants of every module:
/// budget conservation, clock sanity, adjacency and star exclusivity, the
/// per-vertex equation residuals, agreement with the direct solver, and the
/// simultaneous-flat fraction.
pub fn run_invariant_suite(
    g: &MetricGraph,
    root: VertexId,
    cfg: &SimConfig,
    n_paths: usize,
    fault: Option<Fault>,
) -> Result<SuiteReport> {
    let tallies: Vec<Tally> = (0..n_paths as u64)
        .into_par_iter()
        .map(|r| replica(g, root, cfg, r, fault))
        .collect::<Result<_>>()?;

    let sum = |f: fn(&Tally) -> usize| tallies.iter().map(f).sum::<usize>();
    let max = |f: fn(&Tally) -> f64| tallies.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let bound = g
        .interior_vertices()
        .into_iter()
        .map(|v| cfg.quantum + estimator_bound(g, v, cfg))
        .fold(cfg.quantum, f64::max);
    let flat = FlatReport::merge(&tallies.iter().flat_map(|t| t.flat.clone()).collect::<Vec<_>>());

    let budget = sum(|t| t.budget);
    let clock: Vec<String> = tallies.iter().flat_map(|t| t.clock.clone()).collect();
    let adjacency = sum(|t| t.adjacency);
    let assembly: Vec<String> = tallies.iter().flat_map(|t| t.assembly.clone()).collect();
    let residual_excess = max(|t| t.residual_excess);
    let agreement_excess = max(|t| t.agreement_excess);
    let ambiguous = sum(|t| t.ambiguous);

    let checks = vec![
        Check {
            name: "budget".into(),
            pass: budget == 0,
            value: budget as f64,
            threshold: 0.0,
            detail: "grid times where the leaf clocks do not sum to t".into(),
        },
        Check {
            name: "clock".into(),
            pass: clock.is_empty(),
            value: clock.len() as f64,
            threshold: 0.0,
            detail: clock.first().cloned().unwrap_or_else(|| "monotone, T(0) = 0, one clock running".into()),
        },
        Check {
            name: "adjacency".into(),
            pass: adjacency == 0,
            value: adjacency as f64,
            threshold: 0.0,
            detail: "consecutive points neither on one edge nor next to a shared vertex".into(),
        },
        Check {
            name: "exclusivity".into(),
            pass: assembly.is_empty(),
            value: assembly.len() as f64,
            threshold: 0.0,
            detail: assembly.first().cloned().unwrap_or_else(|| "frozen edges within the kernel window".into()),
        },
        Check {
            name: "equation-residual".into(),
            pass: residual_excess <= 0.0,
            value: max(|t| t.residual),
            threshold: bound,
            detail: "worst per-vertex spread of L/alpha at the leaf clocks".into(),
        },
        Check {
            name: "allocate-vs-solve".into(),
            pass: agreement_excess <= 0.0,
            value: max(|t| t.agreement),
            threshold: bound,
            detail: format!("root ratio gap to the direct solution; {ambiguous} ambiguous times skipped"),
        },
        Check {
            name: "simultaneous-flat".into(),
            pass: flat.fraction < 1.0 || flat.flat_levels == 0,
            value: flat.fraction,
            threshold: 1.0,
            detail: format!("{} of {} flat levels shared by two edges", flat.violating_levels, flat.flat_levels),
        },
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(SuiteReport { n_paths, checks, pass })
}
