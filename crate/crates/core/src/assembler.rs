//! Splicing edge processes into a graph-valued path.
//!
//! [`assemble_star`] works offline from whole edge paths and a precomputed
//! [`TimeChange`]. [`Simulation`] is the online, recursive form used for
//! general trees: one allocation node per interior vertex, where a child is
//! either a raw edge or the sub-process living beyond a bridge edge. A
//! sub-process's local time at the parent vertex is the bridge edge's
//! ledger read at the bridge edge's own clock, so nothing is re-estimated
//! from spliced paths.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::clock::{self, Allocator, StepLedger, TimeChange};
use crate::edge::{local_time_kernel, EdgePath, EdgeStream, SimConfig};
use crate::error::{Error, Result};
use crate::graph::{validate_graph, EdgeId, EdgeSpec, GraphPoint, MetricGraph, VertexId};
use crate::rng::NormalStream;

/// A spliced trajectory on the global grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPath {
    pub dt: f64,
    pub points: Vec<GraphPoint>,
    /// Leaf-edge clocks, edges ascending by id.
    pub time_change: TimeChange,
}

impl GraphPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,edge_id,coord")?;
        for (k, p) in self.points.iter().enumerate() {
            writeln!(w, "{},{},{}", self.time(k), p.edge.0, p.coord)?;
        }
        Ok(())
    }
}

/// Flattened leaf-edge clocks `T_i(t)`.
pub fn leaf_clocks(gp: &GraphPath) -> &TimeChange {
    &gp.time_change
}

/// Distance from a vertex within which a frozen edge may rest: the kernel
/// window plus one step of overshoot.
pub fn window_tolerance(g: &MetricGraph, cfg: &SimConfig) -> f64 {
    cfg.kernel_eps + 8.0 * g.sigma_max() * cfg.dt.sqrt() + g.drift_max() * cfg.dt
}

/// Largest one-step increase of any weighted local time at `v`.
pub fn estimator_bound(g: &MetricGraph, v: VertexId, cfg: &SimConfig) -> f64 {
    g.incident_edges(v)
        .into_iter()
        .map(|e| {
            let spec = g.edge(e).expect("incident edge");
            spec.sigma_max().powi(2) * cfg.dt / (2.0 * cfg.kernel_eps) / g.weight(v, e)
        })
        .fold(0.0, f64::max)
}

fn common_vertex(g: &MetricGraph, edges: &[EdgeId]) -> Result<Option<VertexId>> {
    if edges.len() < 2 {
        return Ok(None);
    }
    let first = g.edge(edges[0])?;
    for &v in &first.endpoints {
        if edges.iter().all(|&e| g.edge(e).map(|s| s.endpoints.contains(&v)).unwrap_or(false)) {
            return Ok(Some(v));
        }
    }
    Err(Error::InvalidParameter(format!("edges {edges:?} do not share a vertex")))
}

/// Splices star edge paths with a time change: at step `k` the point is
/// `(i, Y_i(T_i(t_k)))` for the edge whose clock advanced.
pub fn assemble_star(
    paths: &[EdgePath],
    tc: &TimeChange,
    g: &MetricGraph,
    cfg: &SimConfig,
) -> Result<GraphPath> {
    let by_edge: HashMap<EdgeId, &EdgePath> = paths.iter().map(|p| (p.edge, p)).collect();
    let ordered: Vec<&EdgePath> = tc
        .edges
        .iter()
        .map(|e| by_edge.get(e).copied().ok_or(Error::UnknownEdge(*e)))
        .collect::<Result<_>>()?;
    let center = common_vertex(g, &tc.edges)?;
    let tol = window_tolerance(g, cfg);

    let mut counts = vec![0usize; ordered.len()];
    let mut points = Vec::with_capacity(tc.len());
    points.push(GraphPoint::new(tc.edges[0], ordered[0].coords[0]));
    let mut last = 0;
    for k in 1..tc.len() {
        let i = tc
            .active_at(k)
            .ok_or_else(|| Error::InvalidParameter(format!("no clock advances at step {k}")))?;
        counts[i] += 1;
        let path = ordered[i];
        let y = *path.coords.get(counts[i]).ok_or(Error::Starved { edge: path.edge, time: tc.time(k) })?;
        if i != last {
            if let Some(v) = center {
                let spec = g.edge(ordered[last].edge)?;
                let d = (ordered[last].coords[counts[last]] - spec.vertex_coord(v).expect("incident")).abs();
                if d > tol {
                    return Err(Error::Exclusivity { time: tc.time(k), vertex: v, edge: spec.id, distance: d });
                }
            }
            last = i;
        }
        points.push(GraphPoint::new(path.edge, y));
    }
    Ok(GraphPath { dt: tc.dt, points, time_change: tc.clone() })
}

/// Kernel ledger window index of vertex `v` on edge `e`.
fn window_of(e: &EdgeSpec, v: VertexId) -> usize {
    usize::from(e.origin != v)
}

fn edge_stream(e: &EdgeSpec, x0: f64, cfg: &SimConfig, replica: u64, record: bool) -> EdgeStream {
    let mut windows = vec![0.0];
    if !e.is_infinite() {
        windows.push(e.length);
    }
    let s = EdgeStream::new(e, x0, cfg.dt, NormalStream::new(cfg.seed, replica, e.id))
        .with_windows(cfg.kernel_eps, &windows);
    if record {
        s.recording()
    } else {
        s
    }
}

enum Child {
    Edge { stream: EdgeStream, index: usize },
    Sub(Box<Node>),
}

struct Node {
    vertex: VertexId,
    children: Vec<Child>,
    /// Edge of each child incident to `vertex`.
    bridge: Vec<EdgeId>,
    /// Window index of `vertex` on each child's bridge edge.
    window: Vec<usize>,
    /// Coordinate of `vertex` on each child's bridge edge.
    vertex_coord: Vec<f64>,
    alpha: Vec<f64>,
    alloc: Allocator,
    last: usize,
    /// Child holding the edge back towards the parent vertex.
    parent_pos: Option<usize>,
}

impl Child {
    fn point(&self) -> GraphPoint {
        match self {
            Child::Edge { stream, .. } => GraphPoint::new(stream.edge(), stream.coord()),
            Child::Sub(n) => n.point(),
        }
    }

    fn stream(&self) -> &EdgeStream {
        match self {
            Child::Edge { stream, .. } => stream,
            Child::Sub(n) => n.children[n.parent_pos.expect("sub node has a parent")].stream(),
        }
    }

    fn step(&mut self) -> Result<usize> {
        match self {
            Child::Edge { stream, index } => {
                stream.step()?;
                Ok(*index)
            }
            Child::Sub(n) => n.step(),
        }
    }

    fn count_nodes(&self) -> usize {
        match self {
            Child::Edge { .. } => 0,
            Child::Sub(n) => n.count_nodes(),
        }
    }

    fn visit_streams<'a>(&'a self, f: &mut dyn FnMut(&'a EdgeStream)) {
        match self {
            Child::Edge { stream, .. } => f(stream),
            Child::Sub(n) => n.children.iter().for_each(|c| c.visit_streams(f)),
        }
    }

    fn visit_streams_mut(&mut self, f: &mut dyn FnMut(&mut EdgeStream) -> Result<()>) -> Result<()> {
        match self {
            Child::Edge { stream, .. } => f(stream),
            Child::Sub(n) => n.children.iter_mut().try_for_each(|c| c.visit_streams_mut(f)),
        }
    }
}

struct Build<'a> {
    g: &'a MetricGraph,
    cfg: &'a SimConfig,
    replica: u64,
    record: bool,
    start: GraphPoint,
}

impl Build<'_> {
    /// Edges in the subtree reached from `vertex` through `edge`.
    fn subtree_edges(&self, vertex: VertexId, edge: EdgeId) -> Vec<EdgeId> {
        let mut out = vec![edge];
        let mut stack = vec![(edge, vertex)];
        while let Some((e, from)) = stack.pop() {
            let spec = self.g.edge(e).expect("edge");
            if let Some(w) = spec.other_end(from) {
                for f in self.g.incident_edges(w) {
                    if f != e {
                        out.push(f);
                        stack.push((f, w));
                    }
                }
            }
        }
        out
    }

    fn node(&self, vertex: VertexId, parent: Option<EdgeId>) -> Result<Node> {
        let g = self.g;
        let incident = g.incident_edges(vertex);
        let mut children = Vec::with_capacity(incident.len());
        let (mut bridge, mut window, mut vertex_coord, mut alpha) = (vec![], vec![], vec![], vec![]);
        let mut first = None;
        let mut parent_pos = None;

        for (pos, &e) in incident.iter().enumerate() {
            let spec = g.edge(e)?;
            let here = spec.vertex_coord(vertex).expect("incident edge");
            let holds_start = if Some(e) == parent {
                self.start.edge == e
            } else {
                self.subtree_edges(vertex, e).contains(&self.start.edge)
            };
            if holds_start {
                first = Some(pos);
            }
            let idx = g.edge_idx(e).expect("edge index");
            let child = match (Some(e) == parent, spec.other_end(vertex)) {
                (true, _) => {
                    parent_pos = Some(pos);
                    let from = spec.other_end(vertex).and_then(|p| spec.vertex_coord(p)).expect("bridge");
                    let x0 = if holds_start { self.start.coord } else { from };
                    Child::Edge { stream: edge_stream(spec, x0, self.cfg, self.replica, self.record), index: idx }
                }
                (false, Some(w)) if g.degree(w) >= 2 => Child::Sub(Box::new(self.node(w, Some(e))?)),
                _ => {
                    let x0 = if holds_start { self.start.coord } else { here };
                    Child::Edge { stream: edge_stream(spec, x0, self.cfg, self.replica, self.record), index: idx }
                }
            };
            children.push(child);
            bridge.push(e);
            window.push(window_of(spec, vertex));
            vertex_coord.push(here);
            alpha.push(g.weight(vertex, e));
        }

        // outside the start's subtree a sub-process enters from its parent
        let first = first.or(parent_pos).unwrap_or(0);
        let alloc = Allocator::new(alpha.clone(), self.cfg.quantum, first);
        Ok(Node { vertex, children, bridge, window, vertex_coord, alpha, alloc, last: first, parent_pos })
    }
}

impl Node {
    fn point(&self) -> GraphPoint {
        self.children[self.last].point()
    }

    fn count_nodes(&self) -> usize {
        1 + self.children.iter().map(Child::count_nodes).sum::<usize>()
    }

    /// Advances the active child by one step; returns the leaf edge index.
    fn step(&mut self) -> Result<usize> {
        let i = self.alloc.active();
        let leaf = self.children[i].step()?;
        self.last = i;
        let (children, window, alpha) = (&self.children, &self.window, &self.alpha);
        self.alloc.advance(|j, _| children[j].stream().local_time(window[j]) / alpha[j]);
        Ok(leaf)
    }

    /// Checks every frozen child rests within `tol` of this vertex, recursively.
    fn check_exclusive(&self, g: &MetricGraph, tol: f64, time: f64) -> Result<()> {
        for (j, c) in self.children.iter().enumerate() {
            if let Child::Sub(n) = c {
                n.check_exclusive(g, tol, time)?;
            }
            if j == self.last {
                continue;
            }
            let p = c.point();
            let d = if p.edge == self.bridge[j] {
                (p.coord - self.vertex_coord[j]).abs()
            } else {
                g.distance_to_vertex(p, self.vertex)?
            };
            if d > tol {
                return Err(Error::Exclusivity { time, vertex: self.vertex, edge: p.edge, distance: d });
            }
        }
        Ok(())
    }
}

/// Online recursive simulation of one replica.
pub struct Simulation<'g> {
    g: &'g MetricGraph,
    root: Node,
    dt: f64,
    steps: u64,
    tol: f64,
    check_every_step: bool,
}

fn check_inputs(g: &MetricGraph, cfg: &SimConfig) -> Result<()> {
    let report = validate_graph(g);
    if !report.is_ok() {
        return Err(Error::InvalidGraph(report.to_string()));
    }
    cfg.validate(g.sigma_max())?;
    Ok(())
}

impl<'g> Simulation<'g> {
    /// Builds the allocation tree rooted at `root`, starting the process at
    /// `start` (the root vertex when `None`).
    pub fn new(
        g: &'g MetricGraph,
        root: VertexId,
        start: Option<GraphPoint>,
        cfg: &SimConfig,
        replica: u64,
    ) -> Result<Self> {
        check_inputs(g, cfg)?;
        Self::build(g, root, start, cfg, replica, false)
    }

    /// As [`Simulation::new`] without re-validating graph and config, for
    /// batches of replicas after one checked construction.
    pub(crate) fn prevalidated(
        g: &'g MetricGraph,
        root: VertexId,
        start: Option<GraphPoint>,
        cfg: &SimConfig,
        replica: u64,
    ) -> Result<Self> {
        Self::build(g, root, start, cfg, replica, false)
    }

    fn build(
        g: &'g MetricGraph,
        root: VertexId,
        start: Option<GraphPoint>,
        cfg: &SimConfig,
        replica: u64,
        record: bool,
    ) -> Result<Self> {
        g.vertex_idx(root).ok_or(Error::UnknownVertex(root))?;
        let interior = g.interior_vertices();
        if !interior.is_empty() && !interior.contains(&root) {
            return Err(Error::InvalidParameter(format!("root {root} is not an interior vertex")));
        }
        let start = match start {
            Some(p) => {
                let e = g.edge(p.edge)?;
                if !e.contains_coord(p.coord) {
                    return Err(Error::PointNotOnGraph { edge: p.edge, coord: p.coord });
                }
                p
            }
            None => {
                let e = g.incident_edges(root)[0];
                GraphPoint::new(e, g.edge(e)?.vertex_coord(root).expect("incident"))
            }
        };
        let b = Build { g, cfg, replica, record, start };
        let root = b.node(root, None)?;
        assert_eq!(root.count_nodes(), interior.len().max(1), "one allocation node per interior vertex");
        Ok(Self { g, root, dt: cfg.dt, steps: 0, tol: window_tolerance(g, cfg), check_every_step: false })
    }

    /// Checks star exclusivity at every interior vertex after each step,
    /// instead of only when a child is frozen.
    pub fn check_every_step(mut self, on: bool) -> Self {
        self.check_every_step = on;
        self
    }

    pub fn point(&self) -> GraphPoint {
        self.root.point()
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances global time by one step; returns the leaf edge index that ran.
    pub fn step(&mut self) -> Result<usize> {
        let before = self.root.last;
        let leaf = self.root.step()?;
        self.steps += 1;
        if self.check_every_step || self.root.last != before || self.root.alloc.active() != self.root.last {
            self.root.check_exclusive(self.g, self.tol, self.time())?;
        }
        Ok(leaf)
    }

    /// Leaf clock of every edge, in steps, keyed by edge id.
    pub fn leaf_steps(&self) -> BTreeMap<EdgeId, u64> {
        let mut out = BTreeMap::new();
        for c in &self.root.children {
            c.visit_streams(&mut |s| {
                out.insert(s.edge(), s.steps());
            });
        }
        out
    }

    /// Weighted local time `L/α` of each root child at the root vertex.
    pub fn root_ratios(&self) -> Vec<f64> {
        let r = &self.root;
        (0..r.children.len()).map(|j| r.children[j].stream().local_time(r.window[j]) / r.alpha[j]).collect()
    }

    fn edge_paths(&self) -> BTreeMap<EdgeId, EdgePath> {
        let mut out = BTreeMap::new();
        for c in &self.root.children {
            c.visit_streams(&mut |s| {
                if let Some(p) = s.path() {
                    out.insert(p.edge, p);
                }
            });
        }
        out
    }
}

/// Whether two consecutive points are adjacent: same edge, or one of them
/// within `delta` of a vertex both edges share.
pub fn adjacent(g: &MetricGraph, a: GraphPoint, b: GraphPoint, delta: f64) -> Result<bool> {
    if a.edge == b.edge {
        return Ok(true);
    }
    let (ea, eb) = (g.edge(a.edge)?, g.edge(b.edge)?);
    for &v in &ea.endpoints {
        if let Some(cb) = eb.vertex_coord(v) {
            let ca = ea.vertex_coord(v).expect("endpoint");
            if (a.coord - ca).abs() <= delta || (b.coord - cb).abs() <= delta {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// A recursively assembled path plus the edge trajectories behind it.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub path: GraphPath,
    pub edge_paths: BTreeMap<EdgeId, EdgePath>,
    /// Root vertex and its children's bridge edges, in allocation order.
    pub root: VertexId,
    pub root_children: Vec<EdgeId>,
}

/// Simulates one replica over `cfg.horizon` and splices the graph path.
pub fn assemble_recursive(g: &MetricGraph, root: VertexId, cfg: &SimConfig, replica: u64) -> Result<GraphPath> {
    Ok(assemble_detailed(g, root, cfg, replica)?.path)
}

/// [`assemble_recursive`] keeping every edge path for later analysis.
pub fn assemble_detailed(g: &MetricGraph, root: VertexId, cfg: &SimConfig, replica: u64) -> Result<Assembly> {
    check_inputs(g, cfg)?;
    let mut sim = Simulation::build(g, root, None, cfg, replica, true)?;
    let steps = cfg.steps();
    let mut points = Vec::with_capacity(steps + 1);
    let mut active = Vec::with_capacity(steps);
    points.push(sim.point());
    // a switch happens next to a vertex, but one Euler step can overshoot
    let reach = cfg.downcross_delta.max(sim.tol);

    let mut order: Vec<(EdgeId, usize)> = g.edges().iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    order.sort();
    let mut slot = vec![0usize; g.edges().len()];
    for (s, &(_, i)) in order.iter().enumerate() {
        slot[i] = s;
    }

    for _ in 0..steps {
        let leaf = sim.step()?;
        let p = sim.point();
        let prev = *points.last().expect("nonempty");
        if !adjacent(g, prev, p, reach)? {
            return Err(Error::Discontinuity { time: sim.time(), from: (prev.edge, prev.coord), to: (p.edge, p.coord) });
        }
        points.push(p);
        active.push(slot[leaf]);
    }

    // run every edge on to the full clock budget so ledgers are not cut off
    // where the allocation happened to stop; nothing here is spliced in
    for c in &mut sim.root.children {
        c.visit_streams_mut(&mut |s| {
            while (s.steps() as usize) < steps {
                s.step()?;
            }
            Ok(())
        })?;
    }

    let edges = order.iter().map(|&(e, _)| e).collect();
    let tc = TimeChange::from_active(cfg.dt, cfg.quantum, edges, &active);
    Ok(Assembly {
        path: GraphPath { dt: cfg.dt, points, time_change: tc },
        edge_paths: sim.edge_paths(),
        root,
        root_children: sim.root.bridge.clone(),
    })
}

/// Kernel ledgers of every edge at each of its endpoint vertices.
pub fn vertex_ledgers(
    g: &MetricGraph,
    edge_paths: &BTreeMap<EdgeId, EdgePath>,
    eps: f64,
) -> Result<HashMap<(VertexId, EdgeId), Vec<f64>>> {
    let mut out = HashMap::new();
    for (&e, p) in edge_paths {
        let spec = g.edge(e)?;
        for &v in &spec.endpoints {
            let c = spec.vertex_coord(v).expect("endpoint");
            out.insert((v, e), local_time_kernel(p, c, eps).values);
        }
    }
    Ok(out)
}

/// Per-vertex spread of `L^{k,i}(s_i)/α^{k,i}` over incident edges, for
/// every interior vertex; `steps` are leaf clocks in steps.
pub fn equation_residuals(
    g: &MetricGraph,
    ledgers: &HashMap<(VertexId, EdgeId), Vec<f64>>,
    steps: &BTreeMap<EdgeId, usize>,
) -> Result<Vec<(VertexId, f64)>> {
    g.interior_vertices()
        .into_iter()
        .map(|v| {
            let ratios = g
                .incident_edges(v)
                .into_iter()
                .map(|e| Ok(ledger_at(ledgers, v, e, steps[&e])? / g.weight(v, e)))
                .collect::<Result<Vec<f64>>>()?;
            Ok((v, clock::spread(&ratios)))
        })
        .collect()
}

fn ledger_at(ledgers: &HashMap<(VertexId, EdgeId), Vec<f64>>, v: VertexId, e: EdgeId, k: usize) -> Result<f64> {
    let l = ledgers.get(&(v, e)).ok_or(Error::UnknownEdge(e))?;
    l.get(k).copied().ok_or(Error::Starved { edge: e, time: k as f64 })
}

enum SolveChild {
    Edge(EdgeId),
    Sub(Box<SolveNode>),
}

struct SolveNode {
    vertex: VertexId,
    children: Vec<SolveChild>,
    bridge: Vec<EdgeId>,
    alpha: Vec<f64>,
}

fn solve_tree(g: &MetricGraph, vertex: VertexId, parent: Option<EdgeId>) -> SolveNode {
    let incident = g.incident_edges(vertex);
    let children = incident
        .iter()
        .map(|&e| match g.edge(e).expect("edge").other_end(vertex) {
            Some(w) if Some(e) != parent && g.degree(w) >= 2 => SolveChild::Sub(Box::new(solve_tree(g, w, Some(e)))),
            _ => SolveChild::Edge(e),
        })
        .collect();
    let alpha = incident.iter().map(|&e| g.weight(vertex, e)).collect();
    SolveNode { vertex, children, bridge: incident, alpha }
}

struct Solver<'a> {
    ledgers: &'a HashMap<(VertexId, EdgeId), Vec<f64>>,
    dt: f64,
}

/// Local time at the parent vertex of a sub-process, as a function of the
/// sub-process's total clock.
struct SubLedger<'a, 'b> {
    solver: &'b Solver<'a>,
    node: &'b SolveNode,
    parent_ledger: &'a [f64],
    bridge: EdgeId,
    budget: usize,
    memo: RefCell<HashMap<usize, f64>>,
    error: RefCell<Option<Error>>,
}

impl StepLedger for SubLedger<'_, '_> {
    fn samples(&self) -> usize {
        self.budget + 1
    }

    fn value(&self, k: usize) -> f64 {
        if let Some(&v) = self.memo.borrow().get(&k) {
            return v;
        }
        let v = match self.solver.solve(self.node, k) {
            Ok(steps) => self.parent_ledger.get(steps[&self.bridge]).copied().unwrap_or(f64::INFINITY),
            Err(Error::Infeasible { .. }) => f64::INFINITY,
            Err(e) => {
                self.error.borrow_mut().get_or_insert(e);
                f64::INFINITY
            }
        };
        self.memo.borrow_mut().insert(k, v);
        v
    }
}

impl<'a> Solver<'a> {
    fn solve(&self, node: &SolveNode, total: usize) -> Result<BTreeMap<EdgeId, usize>> {
        let n = node.children.len();
        let mut subs: Vec<Option<SubLedger<'a, '_>>> = Vec::with_capacity(n);
        for (j, c) in node.children.iter().enumerate() {
            subs.push(match c {
                SolveChild::Edge(_) => None,
                SolveChild::Sub(sub) => Some(SubLedger {
                    solver: self,
                    node: sub,
                    parent_ledger: &self.ledgers[&(node.vertex, node.bridge[j])],
                    bridge: node.bridge[j],
                    budget: total,
                    memo: RefCell::new(HashMap::new()),
                    error: RefCell::new(None),
                }),
            });
        }
        let refs: Vec<&dyn StepLedger> = node
            .children
            .iter()
            .enumerate()
            .map(|(j, c)| match c {
                SolveChild::Edge(e) => &self.ledgers[&(node.vertex, *e)] as &dyn StepLedger,
                SolveChild::Sub(_) => subs[j].as_ref().expect("sub ledger") as &dyn StepLedger,
            })
            .collect();
        let sol = clock::solve_steps(&refs, &node.alpha, total, &node.bridge, self.dt);
        for s in subs.iter().flatten() {
            if let Some(e) = s.error.borrow_mut().take() {
                return Err(e);
            }
        }
        let sol = sol?;

        let mut out = BTreeMap::new();
        for (j, c) in node.children.iter().enumerate() {
            match c {
                SolveChild::Edge(e) => {
                    out.insert(*e, sol.steps[j]);
                }
                SolveChild::Sub(sub) => out.extend(self.solve(sub, sol.steps[j])?),
            }
        }
        Ok(out)
    }
}

/// Solves the full-graph time-change equations at global step `total` by
/// nesting the star solver along the same recursion as the assembler.
pub fn solve_graph_equations(
    g: &MetricGraph,
    root: VertexId,
    ledgers: &HashMap<(VertexId, EdgeId), Vec<f64>>,
    dt: f64,
    total: usize,
) -> Result<BTreeMap<EdgeId, usize>> {
    let tree = solve_tree(g, root, None);
    Solver { ledgers, dt }.solve(&tree, total)
}

/// Root-level `L/α` of each root child, given leaf clocks in steps.
pub fn root_ratios(
    g: &MetricGraph,
    root: VertexId,
    ledgers: &HashMap<(VertexId, EdgeId), Vec<f64>>,
    steps: &BTreeMap<EdgeId, usize>,
) -> Result<Vec<f64>> {
    g.incident_edges(root)
        .into_iter()
        .map(|e| Ok(ledger_at(ledgers, root, e, steps[&e])? / g.weight(root, e)))
        .collect()
}

/// Leaf clocks of a graph path at grid step `k`, in steps.
pub fn steps_at(tc: &TimeChange, k: usize) -> BTreeMap<EdgeId, usize> {
    tc.edges.iter().copied().zip(tc.steps_at(k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EquationCheck {
    pub time: f64,
    pub budget_residual: f64,
    /// Worst per-vertex ratio spread of the allocated clocks.
    pub alloc_mismatch: f64,
    /// Worst per-vertex ratio spread of the direct solution.
    pub solve_mismatch: f64,
    /// Largest root-level ratio difference between the two.
    pub agreement: f64,
}

/// Compares allocated leaf clocks against the direct solution at `k`.
pub fn check_equations(
    g: &MetricGraph,
    asm: &Assembly,
    ledgers: &HashMap<(VertexId, EdgeId), Vec<f64>>,
    k: usize,
) -> Result<EquationCheck> {
    let tc = &asm.path.time_change;
    let alloc_steps = steps_at(tc, k);
    let solved = solve_graph_equations(g, asm.root, ledgers, tc.dt, k)?;
    let worst = |steps: &BTreeMap<EdgeId, usize>| -> Result<f64> {
        Ok(equation_residuals(g, ledgers, steps)?.into_iter().map(|(_, r)| r).fold(0.0, f64::max))
    };
    let budget: f64 = tc.at(k).iter().sum::<f64>() - tc.time(k);
    let ra = root_ratios(g, asm.root, ledgers, &alloc_steps)?;
    let rs = root_ratios(g, asm.root, ledgers, &solved)?;
    let agreement = ra.iter().zip(&rs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(EquationCheck {
        time: tc.time(k),
        budget_residual: budget.abs(),
        alloc_mismatch: worst(&alloc_steps)?,
        solve_mismatch: worst(&solved)?,
        agreement,
    })
}
