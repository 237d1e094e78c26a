#![allow(dead_code)]

use std::collections::BTreeMap;

use graph_diffusion::graph::{Coefficients, EdgeId, EdgeSpec, MetricGraph, VertexId};

pub fn edge(id: u32, endpoints: &[u32], length: f64) -> EdgeSpec {
    EdgeSpec {
        id: EdgeId(id),
        endpoints: endpoints.iter().map(|&v| VertexId(v)).collect(),
        length,
        origin: VertexId(endpoints[0]),
        drift: Coefficients::constant(0.0),
        volatility: Coefficients::constant(1.0),
    }
}

/// Tree from a parent list: vertex `k + 1` hangs off `parents[k]` through
/// edge `k + 1`. Interior weights are proportional to `raw`.
pub fn tree(parents: &[u32], lengths: &[f64], raw: &[f64]) -> MetricGraph {
    let n = parents.len() as u32 + 1;
    let edges: Vec<EdgeSpec> =
        parents.iter().enumerate().map(|(k, &p)| edge(k as u32 + 1, &[p, k as u32 + 1], lengths[k])).collect();
    let mut incident: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for e in &edges {
        for v in &e.endpoints {
            incident.entry(v.0).or_default().push(e.id.0);
        }
    }
    let mut w = BTreeMap::new();
    for (&v, es) in &incident {
        let total: f64 = es.iter().map(|&e| raw[e as usize - 1]).sum();
        for &e in es {
            let a = if es.len() == 1 { 1.0 } else { raw[e as usize - 1] / total };
            w.insert((VertexId(v), EdgeId(e)), a);
        }
    }
    MetricGraph::new((0..n).map(VertexId).collect(), edges, w)
}

pub fn star(weights: &[f64]) -> MetricGraph {
    let n = weights.len();
    tree(&vec![0; n], &vec![1.0; n], weights)
}

/// Two interior vertices v0, v3 joined by e3 (length 0.5); leaves v1, v2
/// hang off v0 and v4, v5 off v3.
pub fn h_tree() -> MetricGraph {
    let edges = vec![edge(1, &[0, 1], 1.0), edge(2, &[0, 2], 1.0), edge(3, &[0, 3], 0.5), edge(4, &[3, 4], 1.0), edge(5, &[3, 5], 1.0)];
    let mut w = BTreeMap::new();
    for (v, e, a) in [(0, 1, 0.4), (0, 2, 0.3), (0, 3, 0.3), (3, 3, 0.5), (3, 4, 0.25), (3, 5, 0.25), (1, 1, 1.0), (2, 2, 1.0), (4, 4, 1.0), (5, 5, 1.0)] {
        w.insert((VertexId(v), EdgeId(e)), a);
    }
    MetricGraph::new((0..6).map(VertexId).collect(), edges, w)
}

/// Two half-lines glued at v0, weight `p` on e1.
pub fn two_half_lines(p: f64) -> MetricGraph {
    let edges = vec![edge(1, &[0], f64::INFINITY), edge(2, &[0], f64::INFINITY)];
    let w = [((VertexId(0), EdgeId(1)), p), ((VertexId(0), EdgeId(2)), 1.0 - p)].into();
    MetricGraph::new(vec![VertexId(0)], edges, w)
}

/// A half-line `[0, ∞)` with the given coefficients.
pub fn half_line(drift: Coefficients, volatility: Coefficients) -> EdgeSpec {
    EdgeSpec { drift, volatility, ..edge(1, &[0], f64::INFINITY) }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, (var / xs.len() as f64).sqrt())
}
