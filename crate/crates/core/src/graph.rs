//! Loop-free metric graphs carrying per-edge diffusion coefficients and
//! vertex gluing weights.
//!
//! Every edge has its own coordinate: a finite edge is `[0, length]`, a
//! half-infinite edge is `[0, ∞)`. The endpoint sitting at coordinate 0 is
//! the edge's `origin`; a half-infinite edge always has its only vertex at 0.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Constant,
    Linear,
    Polynomial,
}

/// Drift or volatility as a function of the edge coordinate, `Σ coeffs[k] y^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub family: Family,
    pub coeffs: Vec<f64>,
}

impl Coefficients {
    pub fn constant(c: f64) -> Self {
        Self { family: Family::Constant, coeffs: vec![c] }
    }

    pub fn linear(c0: f64, c1: f64) -> Self {
        Self { family: Family::Linear, coeffs: vec![c0, c1] }
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self { family: Family::Polynomial, coeffs }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * y + c)
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * y + c * k as f64;
        }
        acc
    }

    /// Degree ignoring trailing zero coefficients.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    fn arity_ok(&self) -> bool {
        match self.family {
            Family::Constant => self.coeffs.len() == 1,
            Family::Linear => self.coeffs.len() == 2,
            Family::Polynomial => !self.coeffs.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: EdgeId,
    pub endpoints: Vec<VertexId>,
    pub length: f64,
    /// Endpoint at coordinate 0.
    pub origin: VertexId,
    pub drift: Coefficients,
    pub volatility: Coefficients,
}

impl EdgeSpec {
    pub fn is_infinite(&self) -> bool {
        self.length.is_infinite()
    }

    /// Coordinate of vertex `v` on this edge, if `v` is an endpoint.
    pub fn vertex_coord(&self, v: VertexId) -> Option<f64> {
        if v == self.origin && self.endpoints.contains(&v) {
            Some(0.0)
        } else if self.endpoints.contains(&v) {
            Some(self.length)
        } else {
            None
        }
    }

    /// Endpoint that is not `origin`, for finite edges.
    pub fn far_end(&self) -> Option<VertexId> {
        self.endpoints.iter().copied().find(|&v| v != self.origin)
    }

    pub fn other_end(&self, v: VertexId) -> Option<VertexId> {
        if self.endpoints.len() == 2 {
            self.endpoints.iter().copied().find(|&w| w != v)
        } else {
            None
        }
    }

    pub fn contains_coord(&self, y: f64) -> bool {
        y.is_finite() && y >= 0.0 && y <= self.length
    }

    /// Grid used to check regularity: step `length / 10^4` on finite edges,
    /// `[0, 100]` with the same resolution on half-infinite ones.
    pub fn check_grid(&self) -> impl Iterator<Item = f64> {
        let span = if self.is_infinite() { 100.0 } else { self.length };
        const STEPS: usize = 10_000;
        (0..=STEPS).map(move |k| span * k as f64 / STEPS as f64)
    }

    /// Smallest volatility on the regularity grid.
    pub fn sigma_min(&self) -> f64 {
        self.check_grid().map(|y| self.volatility.eval(y)).fold(f64::INFINITY, f64::min)
    }

    pub fn sigma_max(&self) -> f64 {
        self.check_grid().map(|y| self.volatility.eval(y).abs()).fold(0.0, f64::max)
    }

    pub fn drift_max(&self) -> f64 {
        self.check_grid().map(|y| self.drift.eval(y).abs()).fold(0.0, f64::max)
    }
}

/// A point on the graph: an edge and a coordinate on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub edge: EdgeId,
    pub coord: f64,
}

impl GraphPoint {
    pub fn new(edge: EdgeId, coord: f64) -> Self {
        Self { edge, coord }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    EmptyGraph,
    DuplicateId,
    UnknownReference,
    EdgeLength,
    EndpointCount,
    SelfLoop,
    Orientation,
    CoefficientFamily,
    NonLipschitz,
    Ellipticity,
    MultiEdge,
    Cycle,
    Disconnected,
    WeightSupport,
    WeightSum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: Rule, message: impl Into<String>) {
        self.violations.push(Violation { rule, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  [{:?}] {}", v.rule, v.message)?;
        }
        Ok(())
    }
}

pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct MetricGraph {
    vertices: Vec<VertexId>,
    edges: Vec<EdgeSpec>,
    weights: BTreeMap<(VertexId, EdgeId), f64>,
    vertex_index: HashMap<VertexId, usize>,
    edge_index: HashMap<EdgeId, usize>,
    /// Edge indices incident to each vertex, ascending by edge id.
    incident: Vec<Vec<usize>>,
    /// Shortest vertex-to-vertex distances (the tree metric on valid graphs).
    vertex_dist: Vec<Vec<f64>>,
    /// Grid maxima of |σ| and |b| over all edges.
    sigma_max: f64,
    drift_max: f64,
}

impl MetricGraph {
    /// Builds the graph and its lookup tables. Does not validate; call
    /// [`validate_graph`] before simulating.
    pub fn new(
        vertices: Vec<VertexId>,
        edges: Vec<EdgeSpec>,
        weights: BTreeMap<(VertexId, EdgeId), f64>,
    ) -> Self {
        let vertex_index: HashMap<_, _> =
            vertices.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let edge_index: HashMap<_, _> = edges.iter().enumerate().map(|(i, e)| (e.id, i)).collect();

        let mut incident = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            let mut seen = Vec::new();
            for v in &e.endpoints {
                if let Some(&k) = vertex_index.get(v) {
                    if !seen.contains(&k) {
                        incident[k].push(i);
                        seen.push(k);
                    }
                }
            }
        }
        for list in &mut incident {
            list.sort_by_key(|&i| edges[i].id);
        }

        let m = vertices.len();
        let mut dist = vec![vec![f64::INFINITY; m]; m];
        for (k, row) in dist.iter_mut().enumerate() {
            row[k] = 0.0;
        }
        for e in &edges {
            if let [a, b] = e.endpoints[..] {
                if let (Some(&ka), Some(&kb)) = (vertex_index.get(&a), vertex_index.get(&b)) {
                    if e.length < dist[ka][kb] {
                        dist[ka][kb] = e.length;
                        dist[kb][ka] = e.length;
                    }
                }
            }
        }
        for via in 0..m {
            for a in 0..m {
                for b in 0..m {
                    let d = dist[a][via] + dist[via][b];
                    if d < dist[a][b] {
                        dist[a][b] = d;
                    }
                }
            }
        }

        let sigma_max = edges.iter().map(EdgeSpec::sigma_max).fold(0.0, f64::max);
        let drift_max = edges.iter().map(EdgeSpec::drift_max).fold(0.0, f64::max);
        Self { vertices, edges, weights, vertex_index, edge_index, incident, vertex_dist: dist, sigma_max, drift_max }
    }

    /// Largest |σ| on any edge's check grid.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Largest |b| on any edge's check grid.
    pub fn drift_max(&self) -> f64 {
        self.drift_max
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn weights(&self) -> &BTreeMap<(VertexId, EdgeId), f64> {
        &self.weights
    }

    pub fn edge(&self, id: EdgeId) -> Result<&EdgeSpec> {
        self.edge_index.get(&id).map(|&i| &self.edges[i]).ok_or(Error::UnknownEdge(id))
    }

    pub fn edge_idx(&self, id: EdgeId) -> Option<usize> {
        self.edge_index.get(&id).copied()
    }

    pub fn vertex_idx(&self, id: VertexId) -> Option<usize> {
        self.vertex_index.get(&id).copied()
    }

    /// α^{k,i}; zero when the edge is not incident to the vertex.
    pub fn weight(&self, v: VertexId, e: EdgeId) -> f64 {
        self.weights.get(&(v, e)).copied().unwrap_or(0.0)
    }

    /// Edges incident to `v`, ascending by id.
    pub fn incident_edges(&self, v: VertexId) -> Vec<EdgeId> {
        self.vertex_idx(v)
            .map(|k| self.incident[k].iter().map(|&i| self.edges[i].id).collect())
            .unwrap_or_default()
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.vertex_idx(v).map(|k| self.incident[k].len()).unwrap_or(0)
    }

    /// Vertices that are the end of at least two edges.
    pub fn interior_vertices(&self) -> Vec<VertexId> {
        self.vertices.iter().copied().filter(|&v| self.degree(v) >= 2).collect()
    }

    /// Lowest-id interior vertex, or the lowest-id vertex when there is none.
    pub fn default_root(&self) -> Option<VertexId> {
        self.interior_vertices().into_iter().min().or_else(|| self.vertices.iter().copied().min())
    }

    pub fn vertex_distance(&self, a: VertexId, b: VertexId) -> Result<f64> {
        let ka = self.vertex_idx(a).ok_or(Error::UnknownVertex(a))?;
        let kb = self.vertex_idx(b).ok_or(Error::UnknownVertex(b))?;
        Ok(self.vertex_dist[ka][kb])
    }

    fn check_point(&self, p: GraphPoint) -> Result<&EdgeSpec> {
        let e = self.edge(p.edge).map_err(|_| Error::PointNotOnGraph { edge: p.edge, coord: p.coord })?;
        if !e.contains_coord(p.coord) {
            return Err(Error::PointNotOnGraph { edge: p.edge, coord: p.coord });
        }
        Ok(e)
    }

    /// Distance from `p` to vertex `v` along the tree.
    pub fn distance_to_vertex(&self, p: GraphPoint, v: VertexId) -> Result<f64> {
        let e = self.check_point(p)?;
        let kv = self.vertex_idx(v).ok_or(Error::UnknownVertex(v))?;
        let mut best = f64::INFINITY;
        for &u in &e.endpoints {
            let cu = e.vertex_coord(u).expect("endpoint");
            if let Some(ku) = self.vertex_idx(u) {
                best = best.min((p.coord - cu).abs() + self.vertex_dist[ku][kv]);
            }
        }
        Ok(best)
    }

    /// The point on `e` closest to `p`, as a coordinate of `e`.
    fn nearest_coord_on(&self, p: GraphPoint, e: &EdgeSpec) -> Result<f64> {
        if e.id == p.edge {
            return Ok(p.coord);
        }
        let mut best = (f64::INFINITY, 0.0);
        for &w in &e.endpoints {
            let d = self.distance_to_vertex(p, w)?;
            if d < best.0 {
                best = (d, e.vertex_coord(w).expect("endpoint"));
            }
        }
        Ok(best.1)
    }
}

/// Checks every structural, regularity and weight rule; violations are
/// returned as data.
pub fn validate_graph(g: &MetricGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    if g.edges.is_empty() {
        report.push(Rule::EmptyGraph, "graph has no edges");
    }

    let mut seen_v = std::collections::HashSet::new();
    for v in &g.vertices {
        if !seen_v.insert(*v) {
            report.push(Rule::DuplicateId, format!("vertex {v} declared twice"));
        }
    }
    let mut seen_e = std::collections::HashSet::new();
    for e in &g.edges {
        if !seen_e.insert(e.id) {
            report.push(Rule::DuplicateId, format!("edge {} declared twice", e.id));
        }
    }

    for e in &g.edges {
        check_edge(g, e, &mut report);
    }

    check_topology(g, &mut report);
    check_weights(g, &mut report);
    report
}

fn check_edge(g: &MetricGraph, e: &EdgeSpec, report: &mut ValidationReport) {
    let id = e.id;
    for v in &e.endpoints {
        if g.vertex_idx(*v).is_none() {
            report.push(Rule::UnknownReference, format!("edge {id} references unknown vertex {v}"));
        }
    }
    if !(e.length > 0.0) {
        report.push(Rule::EdgeLength, format!("edge {id} has non-positive length {}", e.length));
    }
    match (e.endpoints.len(), e.is_infinite()) {
        (1, true) | (2, false) => {}
        (n, inf) => report.push(
            Rule::EndpointCount,
            format!(
                "edge {id} has {n} endpoint(s) but is {}; need exactly one endpoint iff infinite",
                if inf { "infinite" } else { "finite" }
            ),
        ),
    }
    if e.endpoints.len() == 2 && e.endpoints[0] == e.endpoints[1] {
        report.push(Rule::SelfLoop, format!("edge {id} joins vertex {} to itself", e.endpoints[0]));
    }
    if !e.endpoints.contains(&e.origin) {
        report.push(Rule::Orientation, format!("edge {id} origin {} is not one of its endpoints", e.origin));
    }

    for (name, c) in [("drift", &e.drift), ("volatility", &e.volatility)] {
        if !c.arity_ok() {
            report.push(
                Rule::CoefficientFamily,
                format!("edge {id} {name}: {:?} family with {} coefficient(s)", c.family, c.coeffs.len()),
            );
            continue;
        }
        if c.coeffs.iter().any(|x| !x.is_finite()) {
            report.push(Rule::CoefficientFamily, format!("edge {id} {name} has non-finite coefficients"));
            continue;
        }
        if e.is_infinite() && c.degree() > 1 {
            report.push(
                Rule::NonLipschitz,
                format!("edge {id} {name}: degree {} polynomial on a half-infinite edge", c.degree()),
            );
        }
    }

    if e.length > 0.0 && e.volatility.arity_ok() {
        let smin = e.sigma_min();
        let slope_ok = !e.is_infinite() || e.volatility.coeffs.get(1).copied().unwrap_or(0.0) >= 0.0;
        if !(smin > 0.0) || !slope_ok {
            report.push(
                Rule::Ellipticity,
                format!("edge {id} volatility is not uniformly positive (grid minimum {smin})"),
            );
        }
    }
}

fn check_topology(g: &MetricGraph, report: &mut ValidationReport) {
    let m = g.vertices.len();
    let mut pairs = std::collections::HashMap::new();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }

    for e in &g.edges {
        let [a, b] = match e.endpoints[..] {
            [a, b] if a != b => [a, b],
            _ => continue,
        };
        let (Some(ka), Some(kb)) = (g.vertex_idx(a), g.vertex_idx(b)) else { continue };
        let key = (ka.min(kb), ka.max(kb));
        if let Some(prev) = pairs.insert(key, e.id) {
            report.push(Rule::MultiEdge, format!("edges {prev} and {} both join {a} and {b}", e.id));
            continue;
        }
        let (ra, rb) = (find(&mut parent, ka), find(&mut parent, kb));
        if ra == rb {
            report.push(Rule::Cycle, format!("edge {} closes a cycle through {a} and {b}", e.id));
        } else {
            parent[ra] = rb;
        }
    }

    if m > 0 {
        let root = find(&mut parent, 0);
        let stray: Vec<String> = (0..m)
            .filter(|&k| find(&mut parent, k) != root)
            .map(|k| g.vertices[k].to_string())
            .collect();
        if !stray.is_empty() {
            report.push(Rule::Disconnected, format!("vertices not connected to {}: {}", g.vertices[0], stray.join(", ")));
        }
    }
}

fn check_weights(g: &MetricGraph, report: &mut ValidationReport) {
    for (&(v, e), &w) in &g.weights {
        let (Some(_), Ok(edge)) = (g.vertex_idx(v), g.edge(e)) else {
            report.push(Rule::UnknownReference, format!("weight ({v}, {e}) references an unknown id"));
            continue;
        };
        if !edge.endpoints.contains(&v) {
            report.push(Rule::WeightSupport, format!("weight ({v}, {e}) = {w} but {e} is not incident to {v}"));
        }
    }
    for &v in &g.vertices {
        let incident = g.incident_edges(v);
        if incident.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for e in &incident {
            match g.weights.get(&(v, *e)) {
                Some(&w) if w > 0.0 && w.is_finite() => sum += w,
                Some(&w) => {
                    report.push(Rule::WeightSupport, format!("weight ({v}, {e}) = {w} must be positive"));
                    sum += w;
                }
                None => report.push(Rule::WeightSupport, format!("missing weight ({v}, {e})")),
            }
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            report.push(Rule::WeightSum, format!("weights at vertex {v} sum to {sum}, not 1"));
        }
    }
}

/// Length of the unique tree path between two points.
pub fn tree_distance(g: &MetricGraph, a: GraphPoint, b: GraphPoint) -> Result<f64> {
    let ea = g.check_point(a)?;
    g.check_point(b)?;
    if a.edge == b.edge {
        return Ok((a.coord - b.coord).abs());
    }
    let mut best = f64::INFINITY;
    for &u in &ea.endpoints {
        let cu = ea.vertex_coord(u).expect("endpoint");
        best = best.min((a.coord - cu).abs() + g.distance_to_vertex(b, u)?);
    }
    Ok(best)
}

/// Coordinates `y_i` of the point of each edge `e_i` nearest to `p`.
pub fn embed(g: &MetricGraph, p: GraphPoint) -> Result<Vec<f64>> {
    g.check_point(p)?;
    g.edges.iter().map(|e| g.nearest_coord_on(p, e)).collect()
}

/// The vertex `p` sits on, if its coordinate is an endpoint coordinate.
pub fn vertex_at(g: &MetricGraph, p: GraphPoint) -> Option<VertexId> {
    let e = g.edge(p.edge).ok()?;
    e.endpoints.iter().copied().find(|&v| e.vertex_coord(v) == Some(p.coord))
}

/// Graph equality: same edge and coordinate, or the same vertex reached
/// through different edges.
pub fn graph_equal(g: &MetricGraph, a: GraphPoint, b: GraphPoint) -> bool {
    if a.edge == b.edge {
        return a.coord == b.coord;
    }
    matches!((vertex_at(g, a), vertex_at(g, b)), (Some(u), Some(w)) if u == w)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn bm_edge(id: u32, endpoints: &[u32], length: f64) -> EdgeSpec {
        EdgeSpec {
            id: EdgeId(id),
            endpoints: endpoints.iter().map(|&v| VertexId(v)).collect(),
            length,
            origin: VertexId(endpoints[0]),
            drift: Coefficients::constant(0.0),
            volatility: Coefficients::constant(1.0),
        }
    }

    /// Star centred at v0 with leaves v1..vN, unit edges oriented away from
    /// the centre.
    pub fn star(weights: &[f64]) -> MetricGraph {
        let n = weights.len() as u32;
        let vertices = (0..=n).map(VertexId).collect();
        let edges = (1..=n).map(|i| bm_edge(i, &[0, i], 1.0)).collect();
        let mut w = BTreeMap::new();
        for i in 1..=n {
            w.insert((VertexId(0), EdgeId(i)), weights[i as usize - 1]);
            w.insert((VertexId(i), EdgeId(i)), 1.0);
        }
        MetricGraph::new(vertices, edges, w)
    }

    /// Two interior vertices v0, v3 joined by e3 (length 0.5); leaves
    /// v1, v2 hang off v0 and v4, v5 off v3.
    pub fn h_tree() -> MetricGraph {
        let vertices = (0..6).map(VertexId).collect();
        let edges = vec![
            bm_edge(1, &[0, 1], 1.0),
            bm_edge(2, &[0, 2], 1.0),
            bm_edge(3, &[0, 3], 0.5),
            bm_edge(4, &[3, 4], 1.0),
            bm_edge(5, &[3, 5], 1.0),
        ];
        let mut w = BTreeMap::new();
        for (v, e, a) in [(0, 1, 0.4), (0, 2, 0.3), (0, 3, 0.3), (3, 3, 0.5), (3, 4, 0.25), (3, 5, 0.25)] {
            w.insert((VertexId(v), EdgeId(e)), a);
        }
        for (v, e) in [(1, 1), (2, 2), (4, 4), (5, 5)] {
            w.insert((VertexId(v), EdgeId(e)), 1.0);
        }
        MetricGraph::new(vertices, edges, w)
    }
}
