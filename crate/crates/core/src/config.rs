//! TOML graph configuration.
//!
//! ```toml
//! vertices = [0, 1, 2, 3]
//!
//! [[edges]]
//! id = 1
//! endpoints = [0, 1]
//! length = 1.0            # `inf` for a half-infinite edge (single endpoint)
//! origin = 0              # endpoint at coordinate 0
//! drift = { family = "constant", coeffs = [0.0] }
//! volatility = { family = "constant", coeffs = [1.0] }
//!
//! [weights.0]             # vertex -> { edge = alpha }
//! 1 = 0.5
//! 2 = 0.3
//! 3 = 0.2
//!
//! [verify]                # optional
//! fault = "shift-clock"   # negative control for `verify`
//! ```
//!
//! Rows for degree-one vertices may be omitted; they default to weight 1 on
//! their single edge. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Coefficients, EdgeId, EdgeSpec, MetricGraph, VertexId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub vertices: Vec<u32>,
    pub edges: Vec<EdgeConfig>,
    #[serde(default)]
    pub weights: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub id: u32,
    pub endpoints: Vec<u32>,
    pub length: f64,
    pub origin: u32,
    pub drift: Coefficients,
    pub volatility: Coefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Advance one leaf clock by an extra grid step before the checks run.
    ShiftClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub fault: Option<Fault>,
}

impl GraphConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("graph config serializes")
    }

    pub fn fault(&self) -> Option<Fault> {
        self.verify.as_ref().and_then(|v| v.fault)
    }

    /// Builds the (unvalidated) graph.
    pub fn to_graph(&self) -> Result<MetricGraph> {
        let vertices: Vec<VertexId> = self.vertices.iter().map(|&v| VertexId(v)).collect();
        let edges: Vec<EdgeSpec> = self
            .edges
            .iter()
            .map(|e| EdgeSpec {
                id: EdgeId(e.id),
                endpoints: e.endpoints.iter().map(|&v| VertexId(v)).collect(),
                length: e.length,
                origin: VertexId(e.origin),
                drift: e.drift.clone(),
                volatility: e.volatility.clone(),
            })
            .collect();

        let mut weights = BTreeMap::new();
        for (v, row) in &self.weights {
            let v = parse_id(v, "vertex")?;
            for (e, &w) in row {
                let e = parse_id(e, "edge")?;
                weights.insert((VertexId(v), EdgeId(e)), w);
            }
        }

        let mut degree: BTreeMap<VertexId, Vec<EdgeId>> = BTreeMap::new();
        for e in &edges {
            for v in &e.endpoints {
                degree.entry(*v).or_default().push(e.id);
            }
        }
        for (v, incident) in degree {
            let has_row = weights.keys().any(|(k, _)| *k == v);
            if incident.len() == 1 && !has_row {
                weights.insert((v, incident[0]), 1.0);
            }
        }

        Ok(MetricGraph::new(vertices, edges, weights))
    }
}

fn parse_id(s: &str, what: &str) -> Result<u32> {
    s.trim()
        .trim_start_matches(['v', 'e'])
        .parse()
        .map_err(|_| Error::Config(format!("weights: `{s}` is not a {what} id")))
}
