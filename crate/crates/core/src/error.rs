use thiserror::Error;

use crate::graph::{EdgeId, VertexId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Config(String),

    #[error("invalid graph:\n{0}")]
    InvalidGraph(String),

    #[error("point (edge {edge}, coord {coord}) is not on the graph")]
    PointNotOnGraph { edge: EdgeId, coord: f64 },

    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),

    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("edge {edge} diverged at step {step}: non-finite state {value}")]
    Diverged { edge: EdgeId, step: usize, value: f64 },

    /// A ledger ran out of simulated edge-clock time before the global horizon.
    #[error("edge {edge} starved at global time {time}: simulate more edge-clock time")]
    Starved { edge: EdgeId, time: f64 },

    #[error("no solution of the time-change equations for t = {t}: ledgers too short")]
    Infeasible { t: f64 },

    #[error("ambiguous time-change solution at level {level}: edges {edges:?} jump together")]
    Ambiguous { level: f64, edges: Vec<EdgeId> },

    #[error("star exclusivity violated at t = {time}: edge {edge} frozen at distance {distance} from vertex {vertex}")]
    Exclusivity { time: f64, vertex: VertexId, edge: EdgeId, distance: f64 },

    #[error("adjacency continuity violated at t = {time}: {from:?} -> {to:?}")]
    Discontinuity {
        time: f64,
        from: (EdgeId, f64),
        to: (EdgeId, f64),
    },

    #[error("test function is not in the generator domain: {0}")]
    NotAdmissible(String),

    #[error("too many paths did not exit before the horizon: {unexited} of {n_paths}")]
    HorizonExhausted { unexited: usize, n_paths: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
