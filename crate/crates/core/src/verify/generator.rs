use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{mean_se, Report};
use crate::assembler::Simulation;
use crate::edge::SimConfig;
use crate::error::{Error, Result};
use crate::graph::{vertex_at, Coefficients, EdgeId, GraphPoint, MetricGraph, VertexId};

const GLUING_TOL: f64 = 1e-9;

/// `f(x) = poly(y) φ(|y|)` on one edge, with `y = direction (x − anchor)`
/// and `φ` a cubic taper from 1 on `[0, taper.0]` to 0 beyond `taper.1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Piece {
    pub edge: EdgeId,
    pub anchor: f64,
    pub direction: f64,
    pub poly: Coefficients,
    pub taper: (f64, f64),
}

impl Piece {
    /// `(φ, φ', φ'')` at distance `r ≥ 0`.
    fn taper_at(&self, r: f64) -> (f64, f64, f64) {
        let (a, b) = self.taper;
        if r <= a {
            return (1.0, 0.0, 0.0);
        }
        if r >= b {
            return (0.0, 0.0, 0.0);
        }
        let w = b - a;
        let s = (r - a) / w;
        (1.0 - s * s * (3.0 - 2.0 * s), -6.0 * s * (1.0 - s) / w, -(6.0 - 12.0 * s) / (w * w))
    }

    /// `(f, df/dy, d²f/dy²)` at local coordinate `y`.
    fn jet(&self, y: f64) -> (f64, f64, f64) {
        let (p, dp) = (self.poly.eval(y), self.poly.derivative(y));
        let c = &self.poly.coeffs;
        let ddp: f64 = (2..c.len()).map(|k| (k * (k - 1)) as f64 * c[k] * y.powi(k as i32 - 2)).sum();
        let sign = if y < 0.0 { -1.0 } else { 1.0 };
        let (t, dt, ddt) = self.taper_at(y.abs());
        let (dt, ddt) = (sign * dt, ddt);
        (p * t, dp * t + p * dt, ddp * t + 2.0 * dp * dt + p * ddt)
    }

    fn local(&self, x: f64) -> f64 {
        self.direction * (x - self.anchor)
    }
}

/// Piecewise test function; edges without a piece carry `f ≡ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    pub pieces: Vec<Piece>,
}

impl TestFunction {
    pub fn constant(g: &MetricGraph, c: f64) -> Self {
        let pieces = g
            .edges()
            .iter()
            .map(|e| Piece {
                edge: e.id,
                anchor: 0.0,
                direction: 1.0,
                poly: Coefficients::constant(c),
                taper: (f64::INFINITY, f64::INFINITY),
            })
            .collect();
        Self { pieces }
    }

    /// `(y)²` around an edge-interior point, tapered to zero within
    /// `radius`, which must stay clear of the edge's vertices.
    pub fn interior_quadratic(g: &MetricGraph, p: GraphPoint, radius: f64) -> Result<Self> {
        let e = g.edge(p.edge)?;
        let clear = e.endpoints.iter().all(|&v| (p.coord - e.vertex_coord(v).expect("endpoint")).abs() > radius);
        if !clear || !e.contains_coord(p.coord) {
            return Err(Error::NotAdmissible(format!("support of radius {radius} around {p:?} reaches a vertex")));
        }
        let piece = Piece {
            edge: p.edge,
            anchor: p.coord,
            direction: 1.0,
            poly: Coefficients::polynomial(vec![0.0, 0.0, 1.0]),
            taper: (0.5 * radius, radius),
        };
        Ok(Self { pieces: vec![piece] })
    }

    /// Admissible member of the generator domain at vertex `v`: value
    /// `value` at `v`, outward slopes `raw_slopes` projected onto
    /// `Σ α c = 0`, and second derivatives chosen so `𝓛_i f(v) = target` on
    /// every edge. Each piece tapers to zero over `taper`.
    pub fn admissible_at(
        g: &MetricGraph,
        v: VertexId,
        raw_slopes: &[f64],
        value: f64,
        target: f64,
        taper: (f64, f64),
    ) -> Result<Self> {
        let edges = g.incident_edges(v);
        if raw_slopes.len() != edges.len() {
            return Err(Error::InvalidParameter(format!("{} slopes for {} edges", raw_slopes.len(), edges.len())));
        }
        let alpha: Vec<f64> = edges.iter().map(|&e| g.weight(v, e)).collect();
        let lambda = alpha.iter().zip(raw_slopes).map(|(a, s)| a * s).sum::<f64>()
            / alpha.iter().map(|a| a * a).sum::<f64>();
        let mut pieces = Vec::with_capacity(edges.len());
        for (i, &e) in edges.iter().enumerate() {
            let spec = g.edge(e)?;
            if !(taper.1 < spec.length) {
                return Err(Error::NotAdmissible(format!("taper {taper:?} reaches the far end of {e}")));
            }
            let anchor = spec.vertex_coord(v).expect("incident");
            let direction = if anchor == 0.0 { 1.0 } else { -1.0 };
            let c = raw_slopes[i] - lambda * alpha[i];
            let sigma = spec.volatility.eval(anchor);
            let b = direction * spec.drift.eval(anchor);
            let q = 2.0 * (target - b * c) / (sigma * sigma);
            pieces.push(Piece { edge: e, anchor, direction, poly: Coefficients::polynomial(vec![value, c, 0.5 * q]), taper });
        }
        Ok(Self { pieces })
    }

    fn piece(&self, e: EdgeId) -> Option<&Piece> {
        self.pieces.iter().find(|p| p.edge == e)
    }

    pub fn eval(&self, p: GraphPoint) -> f64 {
        self.piece(p.edge).map_or(0.0, |pc| pc.jet(pc.local(p.coord)).0)
    }

    /// `(f, d/dx f, d²/dx² f)` along edge coordinates.
    fn jet(&self, p: GraphPoint) -> (f64, f64, f64) {
        self.piece(p.edge).map_or((0.0, 0.0, 0.0), |pc| {
            let (f, d, dd) = pc.jet(pc.local(p.coord));
            (f, pc.direction * d, dd)
        })
    }

    /// `𝓛_i f = b f' + σ² f''/2` on the edge holding `p`.
    pub fn edge_generator(&self, g: &MetricGraph, p: GraphPoint) -> Result<f64> {
        let e = g.edge(p.edge)?;
        let (_, d, dd) = self.jet(p);
        let s = e.volatility.eval(p.coord);
        Ok(e.drift.eval(p.coord) * d + 0.5 * s * s * dd)
    }

    /// Continuity, gluing `Σ α D f = 0` and matching `𝓛_i f` at every vertex.
    pub fn check(&self, g: &MetricGraph) -> Result<()> {
        for &v in g.vertices() {
            let edges = g.incident_edges(v);
            let mut values = Vec::new();
            let mut generators = Vec::new();
            let mut flux = 0.0;
            for &e in &edges {
                let spec = g.edge(e)?;
                let c = spec.vertex_coord(v).expect("incident");
                let p = GraphPoint::new(e, c);
                let (f, d, _) = self.jet(p);
                let outward = if c == 0.0 { d } else { -d };
                flux += g.weight(v, e) * outward;
                values.push(f);
                generators.push(self.edge_generator(g, p)?);
            }
            let spread = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max((x - xs[0]).abs()));
            if spread(&values) > GLUING_TOL {
                return Err(Error::NotAdmissible(format!("discontinuous at {v}: {values:?}")));
            }
            if flux.abs() > GLUING_TOL {
                return Err(Error::NotAdmissible(format!("gluing condition fails at {v}: Σ α D f = {flux}")));
            }
            if spread(&generators) > GLUING_TOL {
                return Err(Error::NotAdmissible(format!("edge generators differ at {v}: {generators:?}")));
            }
        }
        Ok(())
    }

    /// `A f(p)`: the common edge generator value.
    pub fn generator(&self, g: &MetricGraph, p: GraphPoint) -> Result<f64> {
        self.edge_generator(g, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorProbe {
    pub test_function: TestFunction,
    pub start: GraphPoint,
    /// Probe vertex when `start` sits on one.
    pub vertex: Option<VertexId>,
    pub h_grid: Vec<f64>,
}

impl GeneratorProbe {
    pub fn new(g: &MetricGraph, test_function: TestFunction, start: GraphPoint, h_grid: Vec<f64>) -> Self {
        let vertex = vertex_at(g, start);
        Self { test_function, start, vertex, h_grid }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorResult {
    pub h_grid: Vec<f64>,
    /// `(P̂_h f − f)/h`.
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub target: f64,
    pub deviations: Vec<f64>,
    pub n_paths: usize,
}

impl GeneratorResult {
    /// Every deviation within `k` standard errors.
    pub fn within(&self, k: f64) -> bool {
        self.deviations.iter().zip(&self.std_errors).all(|(d, se)| d.abs() <= k * se)
    }

    pub fn report(&self, cfg: &SimConfig) -> Report {
        Report {
            experiment: "generator".into(),
            params: json!({ "h_grid": self.h_grid, "n_paths": self.n_paths, "dt": cfg.dt, "seed": cfg.seed }),
            statistics: json!({
                "estimates": self.estimates, "target": self.target, "deviations": self.deviations,
            }),
            ci: json!({ "std_errors": self.std_errors, "k": 3.0 }),
            pass: self.within(3.0),
        }
    }
}

/// Monte Carlo estimate of `(E f(X_h) − f(x))/h` for each `h` in the
/// probe's grid, all read off the same paths.
pub fn generator_check(g: &MetricGraph, probe: &GeneratorProbe, n_paths: usize, cfg: &SimConfig) -> Result<GeneratorResult> {
    let f = &probe.test_function;
    f.check(g)?;
    if n_paths < 2 || probe.h_grid.is_empty() {
        return Err(Error::InvalidParameter("need at least two paths and one h".into()));
    }
    let root = match probe.vertex {
        Some(v) if g.degree(v) >= 2 || g.interior_vertices().is_empty() => v,
        _ => g.default_root().ok_or_else(|| Error::InvalidGraph("no vertices".into()))?,
    };
    let marks: Vec<usize> = probe.h_grid.iter().map(|h| (h / cfg.dt).round() as usize).collect();
    if marks.iter().any(|&m| m == 0) {
        return Err(Error::InvalidParameter("every h must be at least dt".into()));
    }
    let last = *marks.iter().max().expect("nonempty");
    let f0 = f.eval(probe.start);
    let start = (probe.vertex != Some(root)).then_some(probe.start);

    Simulation::new(g, root, start, cfg, 0)?;
    let samples: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|r| {
            let mut sim = Simulation::prevalidated(g, root, start, cfg, r)?;
            let mut out = vec![0.0; marks.len()];
            for k in 1..=last {
                sim.step()?;
                for (j, &m) in marks.iter().enumerate() {
                    if m == k {
                        out[j] = f.eval(sim.point()) - f0;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let target = match probe.vertex {
        Some(v) => {
            let e = g.incident_edges(v)[0];
            f.generator(g, GraphPoint::new(e, g.edge(e)?.vertex_coord(v).expect("incident")))?
        }
        None => f.generator(g, probe.start)?,
    };
    let (mut estimates, mut std_errors, mut deviations) = (vec![], vec![], vec![]);
    for (j, &m) in marks.iter().enumerate() {
        let h = m as f64 * cfg.dt;
        let col: Vec<f64> = samples.iter().map(|s| s[j] / h).collect();
        let (mean, se) = mean_se(&col);
        estimates.push(mean);
        std_errors.push(se);
        deviations.push(mean - target);
    }
    Ok(GeneratorResult { h_grid: probe.h_grid.clone(), estimates, std_errors, target, deviations, n_paths })
}
