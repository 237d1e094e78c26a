use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{Report, Z99};
use crate::assembler::Simulation;
use crate::edge::SimConfig;
use crate::error::{Error, Result};
use crate::graph::{EdgeId, MetricGraph, VertexId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitExperimentResult {
    pub root: VertexId,
    pub delta: f64,
    pub n_paths: usize,
    /// Edges at the root, ascending by id.
    pub edges: Vec<EdgeId>,
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    /// Over exited paths; sums to one.
    pub frequencies: Vec<f64>,
    /// 99% Wald half-widths.
    pub ci_halfwidth: Vec<f64>,
    /// Paths still inside the ball at the horizon.
    pub unexited: usize,
}

impl ExitExperimentResult {
    /// Every weight inside its frequency's confidence interval.
    pub fn within_ci(&self) -> bool {
        (0..self.edges.len()).all(|i| (self.frequencies[i] - self.weights[i]).abs() <= self.ci_halfwidth[i])
    }

    pub fn max_deviation(&self) -> f64 {
        self.frequencies.iter().zip(&self.weights).map(|(f, a)| (f - a).abs()).fold(0.0, f64::max)
    }

    pub fn report(&self, cfg: &SimConfig) -> Report {
        Report {
            experiment: "exit-direction".into(),
            params: json!({
                "root": self.root, "delta": self.delta, "n_paths": self.n_paths,
                "dt": cfg.dt, "horizon": cfg.horizon, "seed": cfg.seed,
                "kernel_eps": cfg.kernel_eps, "quantum": cfg.quantum,
            }),
            statistics: json!({
                "edges": self.edges, "weights": self.weights, "counts": self.counts,
                "frequencies": self.frequencies, "unexited": self.unexited,
                "max_deviation": self.max_deviation(),
            }),
            ci: json!({ "level": 0.99, "halfwidth": self.ci_halfwidth }),
            pass: self.within_ci(),
        }
    }
}

/// Runs `n_paths` replicas from `root` until the tree distance to `root`
/// first reaches `delta` and tallies the edge holding the exit point.
pub fn exit_direction_experiment(
    g: &MetricGraph,
    root: VertexId,
    delta: f64,
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<ExitExperimentResult> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
    }
    let edges = g.incident_edges(root);
    if edges.is_empty() {
        return Err(Error::UnknownVertex(root));
    }
    for &e in &edges {
        let l = g.edge(e)?.length;
        if !(delta > 0.0 && delta < l) {
            return Err(Error::InvalidParameter(format!("delta = {delta} must lie in (0, {l}) for {e}")));
        }
    }
    // fail early on a bad graph or root
    Simulation::new(g, root, None, cfg, 0)?;

    let steps = cfg.steps();
    let outcomes: Vec<Option<usize>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|r| {
            let mut sim = Simulation::prevalidated(g, root, None, cfg, r)?;
            for _ in 0..steps {
                sim.step()?;
                let p = sim.point();
                if g.distance_to_vertex(p, root)? >= delta {
                    return Ok(edges.iter().position(|&e| e == p.edge));
                }
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![0; edges.len()];
    let mut unexited = 0;
    for o in outcomes {
        match o {
            Some(i) => counts[i] += 1,
            None => unexited += 1,
        }
    }
    if unexited * 100 >= n_paths {
        return Err(Error::HorizonExhausted { unexited, n_paths });
    }
    let exited = (n_paths - unexited) as f64;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / exited).collect();
    let ci_halfwidth = frequencies.iter().map(|f| Z99 * (f * (1.0 - f) / exited).sqrt()).collect();
    Ok(ExitExperimentResult {
        root,
        delta,
        n_paths,
        weights: edges.iter().map(|&e| g.weight(root, e)).collect(),
        edges,
        counts,
        frequencies,
        ci_halfwidth,
        unexited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::star;

    #[test]
    fn single_edge_always_exits_along_it() {
        let g = star(&[1.0]);
        let cfg = SimConfig { dt: 1e-4, ..SimConfig::default() };
        let r = exit_direction_experiment(&g, VertexId(0), 0.05, 50, &cfg).unwrap();
        assert_eq!(r.frequencies, vec![1.0]);
        assert!(r.within_ci());
    }

    #[test]
    fn rejects_large_delta_and_short_horizon() {
        let g = star(&[0.5, 0.5]);
        let cfg = SimConfig { dt: 1e-4, ..SimConfig::default() };
        assert!(exit_direction_experiment(&g, VertexId(0), 1.5, 10, &cfg).is_err());
        let short = SimConfig { dt: 1e-4, horizon: 2e-4, ..SimConfig::default() };
        assert!(matches!(
            exit_direction_experiment(&g, VertexId(0), 0.5, 10, &short),
            Err(Error::HorizonExhausted { .. })
        ));
    }

    #[test]
    fn frequencies_sum_to_one() {
        let g = star(&[0.5, 0.3, 0.2]);
        let cfg = SimConfig { dt: 1e-4, ..SimConfig::default() };
        let r = exit_direction_experiment(&g, VertexId(0), 0.1, 300, &cfg).unwrap();
        assert!((r.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.counts.iter().sum::<usize>() + r.unexited, 300);
    }
}
