use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::Report;
use crate::assembler::Simulation;
use crate::edge::SimConfig;
use crate::error::{Error, Result};
use crate::graph::{GraphPoint, MetricGraph, VertexId};

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample critical value at significance `level`.
pub fn ks_critical(n: usize, m: usize, level: f64) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalResult {
    pub statistic: f64,
    pub threshold: f64,
    pub n: usize,
    pub m: usize,
    /// Fraction of simulated samples that are positive.
    pub positive_fraction: f64,
    pub pass: bool,
}

impl MarginalResult {
    pub fn report(&self, t: f64, cfg: &SimConfig) -> Report {
        Report {
            experiment: "marginal-law".into(),
            params: json!({ "t": t, "n": self.n, "m": self.m, "dt": cfg.dt, "seed": cfg.seed }),
            statistics: json!({ "ks": self.statistic, "positive_fraction": self.positive_fraction }),
            ci: json!({ "ks_threshold": self.threshold }),
            pass: self.pass,
        }
    }
}

/// Signed arclength from `root` on a graph whose vertices all have degree
/// at most two: positive on the side of the root's lowest-id edge.
pub fn line_coordinate(g: &MetricGraph, root: VertexId, p: GraphPoint) -> Result<f64> {
    if g.vertices().iter().any(|&v| g.degree(v) > 2) {
        return Err(Error::InvalidParameter("line coordinate needs a path-shaped graph".into()));
    }
    let d = g.distance_to_vertex(p, root)?;
    let edges = g.incident_edges(root);
    if edges.len() < 2 {
        return Ok(d);
    }
    // walk from the root's first edge; p is on the positive side iff reached
    let mut e = edges[0];
    let mut from = root;
    loop {
        if e == p.edge {
            return Ok(d);
        }
        let spec = g.edge(e)?;
        match spec.other_end(from) {
            Some(w) if w != root => match g.incident_edges(w).into_iter().find(|&f| f != e) {
                Some(f) => {
                    from = w;
                    e = f;
                }
                None => return Ok(-d),
            },
            _ => return Ok(-d),
        }
    }
}

/// Signed line coordinates at `cfg.horizon` of `n_paths` assembled paths
/// started at `root`.
pub fn simulate_marginal(g: &MetricGraph, root: VertexId, n_paths: usize, cfg: &SimConfig) -> Result<Vec<f64>> {
    Simulation::new(g, root, None, cfg, 0)?;
    let steps = cfg.steps();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|r| {
            let mut sim = Simulation::prevalidated(g, root, None, cfg, r)?;
            for _ in 0..steps {
                sim.step()?;
            }
            line_coordinate(g, root, sim.point())
        })
        .collect()
}

/// Two-sample KS between simulated and oracle marginals; symmetric in the
/// two sample sets.
pub fn marginal_law_test(samples: &[f64], oracle: &[f64], threshold: f64) -> MarginalResult {
    let statistic = ks_two_sample(samples, oracle);
    let positive = samples.iter().filter(|&&x| x > 0.0).count();
    MarginalResult {
        statistic,
        threshold,
        n: samples.len(),
        m: oracle.len(),
        positive_fraction: positive as f64 / samples.len().max(1) as f64,
        pass: statistic < threshold,
    }
}

/// Exact `N(0, t)` draws.
pub fn bm_samples(t: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, t.sqrt()).expect("finite variance");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// Skew Brownian motion at time `t`: a random walk approximation of `|W|`
/// on `steps` grid points whose every excursion away from zero draws a
/// fresh sign, positive with probability `p`.
pub fn skew_bm_samples(p: f64, t: f64, n: usize, steps: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (t / steps as f64).sqrt()).expect("finite variance");
    (0..n)
        .map(|_| {
            let mut w: f64 = 0.0;
            let mut sign = if rng.random_bool(p) { 1.0 } else { -1.0 };
            for _ in 0..steps {
                let next = w + normal.sample(&mut rng);
                if next == 0.0 || next.signum() != w.signum() {
                    // crossed zero: a new excursion begins
                    sign = if rng.random_bool(p) { 1.0 } else { -1.0 };
                }
                w = next;
            }
            sign * w.abs()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::star;
    use crate::graph::EdgeId;

    #[test]
    fn ks_basics() {
        let a = [0.1, 0.5, 0.3];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        let b = [0.2, 0.4];
        assert_eq!(ks_two_sample(&a, &b), ks_two_sample(&b, &a));
        // F_a jumps at 0.1, 0.3, 0.5; F_b at 0.2, 0.4: sup gap 1/3 at x = 0.1
        assert!((ks_two_sample(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ks_against_brute_force() {
        let a = bm_samples(1.0, 200, 1);
        let b = skew_bm_samples(0.6, 1.0, 150, 50, 2);
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&y| y <= x).count() as f64 / s.len() as f64;
        let brute = a.iter().chain(&b).map(|&x| (cdf(&a, x) - cdf(&b, x)).abs()).fold(0.0, f64::max);
        assert!((ks_two_sample(&a, &b) - brute).abs() < 1e-12);
    }

    #[test]
    fn skew_sampler_marginal() {
        // |X_t| is |N(0, t)| and the sign is an independent p-coin
        let s = skew_bm_samples(0.7, 1.0, 20_000, 200, 3);
        let pos = s.iter().filter(|&&x| x > 0.0).count() as f64 / s.len() as f64;
        assert!((pos - 0.7).abs() < 4.0 * (0.21f64 / 20_000.0).sqrt(), "{pos}");
        let abs: Vec<f64> = s.iter().map(|x| x.abs()).collect();
        let oracle: Vec<f64> = bm_samples(1.0, 20_000, 4).iter().map(|x| x.abs()).collect();
        assert!(ks_two_sample(&abs, &oracle) < ks_critical(20_000, 20_000, 0.001));
    }

    #[test]
    fn line_coordinate_signs() {
        let g = star(&[0.5, 0.5]);
        let r = VertexId(0);
        assert_eq!(line_coordinate(&g, r, GraphPoint::new(EdgeId(1), 0.25)).unwrap(), 0.25);
        assert_eq!(line_coordinate(&g, r, GraphPoint::new(EdgeId(2), 0.25)).unwrap(), -0.25);
        assert!(line_coordinate(&star(&[0.4, 0.3, 0.3]), r, GraphPoint::new(EdgeId(1), 0.1)).is_err());
    }
}
