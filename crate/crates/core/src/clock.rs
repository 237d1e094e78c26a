//! Multi-parameter time change built from local-time ledgers.
//!
//! Edges take turns running their own clock: each runs until its weighted
//! local time `L/α` reaches the current target level, then the next one
//! starts; after the last edge the target rises by one quantum. The
//! resulting clocks approximate the unique solution of
//! `Σ s_i = t, L^i(s_i)/α^i = L^j(s_j)/α^j`, which [`solve_time_equations`]
//! computes directly as a cross-check.

use std::io::Write;

use serde::Serialize;

use crate::edge::LocalTimeLedger;
use crate::error::{Error, Result};
use crate::graph::EdgeId;

/// Round-robin quantum allocator. Indices refer to the caller's children.
#[derive(Debug, Clone)]
pub struct Allocator {
    weights: Vec<f64>,
    quantum: f64,
    round: u64,
    first: usize,
    pos: usize,
    consumed: Vec<u64>,
}

impl Allocator {
    /// `first` is the child whose turn comes first in every round.
    pub fn new(weights: Vec<f64>, quantum: f64, first: usize) -> Self {
        let n = weights.len();
        assert!(n > 0 && first < n);
        Self { weights, quantum, round: 1, first, pos: 0, consumed: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn target(&self) -> f64 {
        self.round as f64 * self.quantum
    }

    /// Child whose clock runs next.
    #[inline]
    pub fn active(&self) -> usize {
        (self.first + self.pos) % self.weights.len()
    }

    pub fn consumed(&self) -> &[u64] {
        &self.consumed
    }

    /// Steps taken by each child so far.
    pub fn consumed_by(&self, i: usize) -> u64 {
        self.consumed[i]
    }

    /// Record that the active child advanced one step, then pass the turn on
    /// while the active child has reached the target. `ratio(i)` is the
    /// current `L^i/α^i` of child `i`, which has taken `steps` steps.
    pub fn advance(&mut self, ratio: impl Fn(usize, u64) -> f64) {
        let i = self.active();
        self.consumed[i] += 1;
        self.settle(ratio);
    }

    pub fn settle(&mut self, ratio: impl Fn(usize, u64) -> f64) {
        let n = self.weights.len();
        if n == 1 {
            return;
        }
        let consumed = &self.consumed;
        let ratio = |i: usize| ratio(i, consumed[i]);
        let (first, quantum) = (self.first, self.quantum);
        let (mut pos, mut round) = (self.pos, self.round);
        let mut scanned = 0;
        while ratio((first + pos) % n) >= round as f64 * quantum {
            pos += 1;
            scanned += 1;
            if pos == n {
                pos = 0;
                round += 1;
            }
            if scanned >= n {
                // every child already at or above the target: skip whole rounds
                let min = (0..n).map(ratio).fold(f64::INFINITY, f64::min);
                let need = (min / quantum).floor() as u64 + 1;
                round = round.max(need);
                scanned = 0;
            }
        }
        self.pos = pos;
        self.round = round;
    }
}

/// Per-edge clocks `T_i(t_k)` on the global grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeChange {
    pub dt: f64,
    pub quantum: f64,
    pub edges: Vec<EdgeId>,
    /// `clocks[i][k] = T_i(k dt)` in edge-clock seconds.
    pub clocks: Vec<Vec<f64>>,
}

impl TimeChange {
    /// Builds clocks from the sequence of children that advanced at each step.
    pub fn from_active(dt: f64, quantum: f64, edges: Vec<EdgeId>, active: &[usize]) -> Self {
        let n = edges.len();
        let mut counts = vec![0u64; n];
        let mut clocks = vec![Vec::with_capacity(active.len() + 1); n];
        for c in clocks.iter_mut() {
            c.push(0.0);
        }
        for &a in active {
            counts[a] += 1;
            for (i, c) in clocks.iter_mut().enumerate() {
                c.push(counts[i] as f64 * dt);
            }
        }
        Self { dt, quantum, edges, clocks }
    }

    pub fn len(&self) -> usize {
        self.clocks.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Clock values at grid step `k`.
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.clocks.iter().map(|c| c[k]).collect()
    }

    /// Clock values as whole edge steps at grid step `k`.
    pub fn steps_at(&self, k: usize) -> Vec<usize> {
        self.clocks.iter().map(|c| (c[k] / self.dt).round() as usize).collect()
    }

    /// Index of the clock that advanced during step `k - 1 -> k`.
    pub fn active_at(&self, k: usize) -> Option<usize> {
        (0..self.clocks.len()).find(|&i| self.clocks[i][k] > self.clocks[i][k - 1])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for e in &self.edges {
            write!(w, ",T_{}", e.0)?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", self.time(k))?;
            for c in &self.clocks {
                write!(w, ",{}", c[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Checks monotonicity, `T_i(0) = 0`, `T_i(t) ≤ t`, the budget
    /// `|Σ T_i(t) - t| ≤ dt`, and that exactly one clock advances per step.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let tol = 1e-9 * self.dt;
        let mut budget_reported = false;
        for k in 0..self.len() {
            let t = self.time(k);
            let sum: f64 = self.clocks.iter().map(|c| c[k]).sum();
            if (sum - t).abs() > self.dt + tol && !budget_reported {
                out.push(format!("budget: sum of clocks {sum} differs from t = {t} by more than dt"));
                budget_reported = true;
            }
            for (i, c) in self.clocks.iter().enumerate() {
                if k == 0 && c[0] != 0.0 {
                    out.push(format!("clock {} starts at {}", self.edges[i], c[0]));
                }
                if c[k] > t + tol {
                    out.push(format!("clock {} exceeds t at t = {t}", self.edges[i]));
                }
            }
            if k > 0 {
                let mut moving = 0;
                for (i, c) in self.clocks.iter().enumerate() {
                    let d = c[k] - c[k - 1];
                    if d < -tol {
                        out.push(format!("clock {} decreases at t = {t}", self.edges[i]));
                    } else if d > tol {
                        moving += 1;
                        if (d - self.dt).abs() > tol {
                            out.push(format!("clock {} advances by {d} at t = {t}", self.edges[i]));
                        }
                    }
                }
                if moving != 1 {
                    out.push(format!("{moving} clocks advance at t = {t}"));
                }
            }
            if out.len() > 16 {
                break;
            }
        }
        out
    }
}

fn check_inputs(ledgers: &[LocalTimeLedger], weights: &[f64], quantum: f64) -> Result<f64> {
    if ledgers.is_empty() || ledgers.len() != weights.len() {
        return Err(Error::InvalidParameter("need one weight per ledger".into()));
    }
    let dt = ledgers[0].dt;
    if ledgers.iter().any(|l| l.dt != dt || l.is_empty()) {
        return Err(Error::InvalidParameter("ledgers must share a common non-empty dt grid".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("weights {weights:?} must be positive and sum to 1")));
    }
    if !(quantum > 0.0) {
        return Err(Error::InvalidParameter("quantum must be positive".into()));
    }
    Ok(dt)
}

/// Runs the quantum allocation over precomputed ledgers up to `horizon`.
pub fn allocate(
    ledgers: &[LocalTimeLedger],
    weights: &[f64],
    horizon: f64,
    quantum: f64,
) -> Result<TimeChange> {
    let dt = check_inputs(ledgers, weights, quantum)?;
    let steps = (horizon / dt).round() as usize;
    let mut alloc = Allocator::new(weights.to_vec(), quantum, 0);
    let mut active = Vec::with_capacity(steps);
    for k in 0..steps {
        let i = alloc.active();
        if alloc.consumed_by(i) as usize + 1 >= ledgers[i].len() {
            return Err(Error::Starved { edge: ledgers[i].edge, time: k as f64 * dt });
        }
        active.push(i);
        alloc.advance(|j, used| ledgers[j].values[used as usize] / weights[j]);
    }
    let edges = ledgers.iter().map(|l| l.edge).collect();
    Ok(TimeChange::from_active(dt, quantum, edges, &active))
}

/// A nondecreasing ledger indexed by whole steps of its own clock.
pub trait StepLedger {
    /// Number of samples (steps + 1).
    fn samples(&self) -> usize;
    fn value(&self, k: usize) -> f64;
}

impl StepLedger for LocalTimeLedger {
    fn samples(&self) -> usize {
        self.values.len()
    }
    fn value(&self, k: usize) -> f64 {
        self.values[k]
    }
}

impl StepLedger for [f64] {
    fn samples(&self) -> usize {
        self.len()
    }
    fn value(&self, k: usize) -> f64 {
        self[k]
    }
}

impl StepLedger for Vec<f64> {
    fn samples(&self) -> usize {
        self.len()
    }
    fn value(&self, k: usize) -> f64 {
        self[k]
    }
}

/// Smallest step `k` with `value(k)/alpha ≥ level`, if any.
pub fn inverse_steps<L: StepLedger + ?Sized>(ledger: &L, alpha: f64, level: f64) -> Option<usize> {
    let (mut lo, mut hi) = (0usize, ledger.samples());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if ledger.value(mid) / alpha < level {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    (lo < ledger.samples()).then_some(lo)
}

/// Solution of the time-change equations at one time, in whole steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSolution {
    pub steps: Vec<usize>,
    /// Common weighted local-time level.
    pub level: f64,
    /// Child that absorbed the budget residual, if any.
    pub jumper: Option<usize>,
}

pub const BISECTION_CAP: usize = 64;

/// A ratio process counts as flat when it stays constant for more than
/// this many steps.
pub const MIN_FLAT_STEPS: usize = 2;

/// Solves `Σ s_i = total, L^i(s_i)/α^i = l` by doubling-then-bisection on
/// the level. The residual `total − Σ h_i(l)` goes to the single child whose
/// inverse jumps across the final bracket.
pub fn solve_steps<L: StepLedger + ?Sized>(
    ledgers: &[&L],
    weights: &[f64],
    total: usize,
    edges: &[EdgeId],
    dt: f64,
) -> Result<StepSolution> {
    let n = ledgers.len();
    if total == 0 {
        return Ok(StepSolution { steps: vec![0; n], level: 0.0, jumper: None });
    }
    if total > (0..n).map(|i| ledgers[i].samples() - 1).sum::<usize>() {
        return Err(Error::Infeasible { t: total as f64 * dt });
    }
    let inv = |l: f64| -> Vec<Option<usize>> {
        (0..n).map(|i| inverse_steps(ledgers[i], weights[i], l)).collect()
    };
    let budget = |h: &[Option<usize>]| -> Option<usize> { h.iter().try_fold(0usize, |acc, x| x.map(|v| acc + v)) };
    let fits = |l: f64| budget(&inv(l)).is_some_and(|b| b <= total);

    // ledgers may report +inf past their feasible range
    let max_level = (0..n)
        .map(|i| ledgers[i].value(ledgers[i].samples() - 1) / weights[i])
        .filter(|l| l.is_finite())
        .fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut hi = (max_level * 1e-6).max(1e-12);
    while fits(hi) {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Infeasible { t: total as f64 * dt });
        }
    }
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let h_lo = inv(lo);
    let h_hi = inv(hi);
    let mut steps: Vec<usize> = h_lo.iter().map(|h| h.expect("feasible lower bracket")).collect();
    let residual = total - steps.iter().sum::<usize>();
    if residual == 0 {
        return Ok(StepSolution { steps, level: lo, jumper: None });
    }
    // Steps each jumper can absorb while its ratio stays inside [lo, hi).
    let capacity = |i: usize| h_hi[i].unwrap_or(ledgers[i].samples()) - 1 - steps[i];
    let jumpers: Vec<usize> = (0..n).filter(|&i| h_hi[i] != h_lo[i] && capacity(i) > 0).collect();
    // Runs no longer than the grid resolution are not flats; only a real
    // flat can take the residual when several children jump together.
    let flats: Vec<usize> = jumpers.iter().copied().filter(|&i| capacity(i) > MIN_FLAT_STEPS).collect();
    let j = match (&jumpers[..], &flats[..]) {
        ([j], _) | (_, [j]) => *j,
        ([], _) => {
            let tied: Vec<EdgeId> = (0..n).filter(|&i| h_hi[i] != h_lo[i]).map(|i| edges[i]).collect();
            let truncated = (0..n).any(|i| h_hi[i].is_none());
            return Err(if tied.len() > 1 && !truncated {
                Error::Ambiguous { level: lo, edges: tied }
            } else {
                Error::Infeasible { t: total as f64 * dt }
            });
        }
        _ => return Err(Error::Ambiguous { level: lo, edges: jumpers.iter().map(|&i| edges[i]).collect() }),
    };
    // The jumper may also take the step that leaves its flat: the ratio
    // then overshoots the level by one ledger increment, which is within
    // the estimator resolution.
    let reach = h_hi[j].unwrap_or(ledgers[j].samples() - 1) - steps[j];
    if residual > reach {
        // the flat cannot take it all: other jumpers must share, and how
        // they share is not determined
        return Err(if jumpers.len() > 1 {
            Error::Ambiguous { level: lo, edges: jumpers.iter().map(|&i| edges[i]).collect() }
        } else {
            Error::Infeasible { t: total as f64 * dt }
        });
    }
    steps[j] += residual;
    Ok(StepSolution { steps, level: lo, jumper: Some(j) })
}

/// Solution in edge-clock seconds with its ratio spread.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSolution {
    pub s: Vec<f64>,
    pub level: f64,
    /// Largest pairwise difference of `L^i(s_i)/α^i`.
    pub mismatch: f64,
    pub within_tol: bool,
}

/// Solves the time-change equation system at global time `t`.
pub fn solve_time_equations(
    ledgers: &[LocalTimeLedger],
    weights: &[f64],
    t: f64,
    tol: f64,
) -> Result<TimeSolution> {
    let dt = check_inputs(ledgers, weights, tol.max(f64::MIN_POSITIVE))?;
    let total = (t / dt).round() as usize;
    let refs: Vec<&LocalTimeLedger> = ledgers.iter().collect();
    let edges: Vec<EdgeId> = ledgers.iter().map(|l| l.edge).collect();
    let sol = solve_steps(&refs, weights, total, &edges, dt)?;
    let ratios: Vec<f64> = (0..ledgers.len()).map(|i| ledgers[i].values[sol.steps[i]] / weights[i]).collect();
    let mismatch = spread(&ratios);
    Ok(TimeSolution {
        s: sol.steps.iter().map(|&k| k as f64 * dt).collect(),
        level: sol.level,
        mismatch,
        within_tol: mismatch <= tol,
    })
}

pub(crate) fn spread(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    if xs.is_empty() {
        0.0
    } else {
        max - min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatViolation {
    pub first: EdgeId,
    pub second: EdgeId,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatReport {
    pub levels: usize,
    /// Levels at which at least one ratio process is flat for more than 2 dt.
    pub flat_levels: usize,
    /// Levels at which at least two are.
    pub violating_levels: usize,
    pub violations: Vec<FlatViolation>,
    /// `violating_levels / flat_levels`, zero when nothing is flat.
    pub fraction: f64,
}

impl FlatReport {
    pub fn merge(reports: &[FlatReport]) -> FlatReport {
        let levels = reports.iter().map(|r| r.levels).sum();
        let flat_levels: usize = reports.iter().map(|r| r.flat_levels).sum();
        let violating_levels: usize = reports.iter().map(|r| r.violating_levels).sum();
        FlatReport {
            levels,
            flat_levels,
            violating_levels,
            violations: Vec::new(),
            fraction: if flat_levels == 0 { 0.0 } else { violating_levels as f64 / flat_levels as f64 },
        }
    }
}

/// Length, in steps, of the run of constant values starting where
/// `L/alpha` first reaches `level`, not counting the step that reaches it.
fn flat_steps(values: &[f64], alpha: f64, level: f64) -> Option<usize> {
    let a = inverse_steps(values, alpha, level)?;
    let v = values[a];
    let b = values[a..].iter().position(|&x| x > v).map_or(values.len(), |p| a + p);
    Some(b - a - 1)
}

/// Looks for levels at which two weighted local times are flat together.
pub fn no_simultaneous_flat_check(
    ledgers: &[LocalTimeLedger],
    weights: &[f64],
    level_grid: &[f64],
) -> FlatReport {
    let mut violations = Vec::new();
    let (mut flat_levels, mut violating_levels) = (0, 0);
    for &l in level_grid {
        let flat: Vec<usize> = (0..ledgers.len())
            .filter(|&i| flat_steps(&ledgers[i].values, weights[i], l).is_some_and(|s| s > MIN_FLAT_STEPS))
            .collect();
        if !flat.is_empty() {
            flat_levels += 1;
        }
        if flat.len() >= 2 {
            violating_levels += 1;
            for (a, &i) in flat.iter().enumerate() {
                for &j in &flat[a + 1..] {
                    violations.push(FlatViolation { first: ledgers[i].edge, second: ledgers[j].edge, level: l });
                }
            }
        }
    }
    FlatReport {
        levels: level_grid.len(),
        flat_levels,
        violating_levels,
        violations,
        fraction: if flat_levels == 0 { 0.0 } else { violating_levels as f64 / flat_levels as f64 },
    }
}

/// `n` evenly spaced levels in `(0, min_i L^i(end)/α^i)`.
pub fn level_grid(ledgers: &[LocalTimeLedger], weights: &[f64], n: usize) -> Vec<f64> {
    let top = ledgers
        .iter()
        .zip(weights)
        .map(|(l, w)| l.final_value() / w)
        .fold(f64::INFINITY, f64::min);
    if !(top > 0.0) || !top.is_finite() {
        return Vec::new();
    }
    (1..=n).map(|k| top * k as f64 / (n + 1) as f64).collect()
}
