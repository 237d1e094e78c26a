//! Statistical checks of the construction: exit-direction law, generator
//! consistency, marginal-law oracles and the invariant suite.
//!
//! Every experiment renders to a [`Report`], the machine-readable form
//! `{experiment, params, statistics, ci, pass}`.

mod exit;
mod generator;
mod marginal;
mod suite;

pub use exit::{exit_direction_experiment, ExitExperimentResult};
pub use generator::{generator_check, GeneratorProbe, GeneratorResult, Piece, TestFunction};
pub use marginal::{
    bm_samples, ks_critical, ks_two_sample, line_coordinate, marginal_law_test, simulate_marginal,
    skew_bm_samples, MarginalResult,
};
pub use suite::{run_invariant_suite, Check, SuiteReport};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Two-sided standard normal quantile at 99%.
pub const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub params: Value,
    pub statistics: Value,
    pub ci: Value,
    pub pass: bool,
}

/// Mean and standard error of the mean.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
