mod common;

use graph_diffusion::graph::{embed, tree_distance, validate_graph, EdgeId, GraphPoint, Rule, VertexId};
use proptest::prelude::*;

/// Random tree shape: parent of vertex k + 1 is any earlier vertex.
fn shape() -> impl Strategy<Value = (Vec<u32>, Vec<f64>, Vec<f64>)> {
    (1usize..9).prop_flat_map(|n| {
        let parents: Vec<BoxedStrategy<u32>> = (0..n).map(|k| (0..=k as u32).boxed()).collect();
        (parents, prop::collection::vec(0.1f64..3.0, n), prop::collection::vec(0.05f64..1.0, n))
    })
}

fn point_on(g: &graph_diffusion::graph::MetricGraph, e: usize, u: f64) -> GraphPoint {
    let spec = &g.edges()[e % g.edges().len()];
    GraphPoint::new(spec.id, u * spec.length)
}

proptest! {
    #[test]
    fn random_trees_validate((parents, lengths, raw) in shape()) {
        let g = common::tree(&parents, &lengths, &raw);
        let r = validate_graph(&g);
        prop_assert!(r.is_ok(), "{}", r);
        for v in g.vertices() {
            let sum: f64 = g.incident_edges(*v).iter().map(|&e| g.weight(*v, e)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn perturbed_weights_are_rejected((parents, lengths, raw) in shape(), bump in 0.01f64..0.5) {
        let g = common::tree(&parents, &lengths, &raw);
        let mut w = g.weights().clone();
        let (&key, _) = w.iter().next().unwrap();
        *w.get_mut(&key).unwrap() += bump;
        let bad = graph_diffusion::graph::MetricGraph::new(g.vertices().to_vec(), g.edges().to_vec(), w);
        prop_assert!(validate_graph(&bad).has(Rule::WeightSum));
    }

    #[test]
    fn extra_edge_closes_a_cycle((parents, lengths, raw) in shape(), a in 0u32..9, b in 0u32..9) {
        let g = common::tree(&parents, &lengths, &raw);
        let n = g.vertices().len() as u32;
        let (a, b) = (a % n, b % n);
        prop_assume!(a != b);
        let mut edges = g.edges().to_vec();
        edges.push(common::edge(100, &[a, b], 1.0));
        let mut w = g.weights().clone();
        w.insert((VertexId(a), EdgeId(100)), 0.0);
        w.insert((VertexId(b), EdgeId(100)), 0.0);
        let bad = graph_diffusion::graph::MetricGraph::new(g.vertices().to_vec(), edges, w);
        let r = validate_graph(&bad);
        prop_assert!(r.has(Rule::Cycle) || r.has(Rule::MultiEdge), "{}", r);
    }

    #[test]
    fn tree_distance_is_a_metric(
        (parents, lengths, raw) in shape(),
        e in prop::array::uniform3(0usize..16),
        u in prop::array::uniform3(0.0f64..=1.0),
    ) {
        let g = common::tree(&parents, &lengths, &raw);
        let p: Vec<GraphPoint> = (0..3).map(|i| point_on(&g, e[i], u[i])).collect();
        let d = |a: usize, b: usize| tree_distance(&g, p[a], p[b]).unwrap();
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        // a vertex reached through two edges is one point
        for v in g.vertices() {
            let at: Vec<GraphPoint> = g
                .incident_edges(*v)
                .iter()
                .map(|&e| GraphPoint::new(e, g.edge(e).unwrap().vertex_coord(*v).unwrap()))
                .collect();
            for q in &at {
                prop_assert!(tree_distance(&g, at[0], *q).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn embedding_is_exact_on_the_point_edge(
        (parents, lengths, raw) in shape(), e in 0usize..16, u in 0.0f64..=1.0,
    ) {
        let g = common::tree(&parents, &lengths, &raw);
        let p = point_on(&g, e, u);
        let y = embed(&g, p).unwrap();
        prop_assert_eq!(y.len(), g.edges().len());
        for (spec, &c) in g.edges().iter().zip(&y) {
            prop_assert!(spec.contains_coord(c));
            if spec.id == p.edge {
                prop_assert_eq!(c, p.coord);
            } else {
                // the nearest point of any other edge is one of its endpoints
                prop_assert!(spec.endpoints.iter().any(|&v| spec.vertex_coord(v) == Some(c)));
            }
        }
    }
}
