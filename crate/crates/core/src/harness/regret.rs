//! Regret traces and the cumulative-regret table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::acquisition::PolicyKind;
use crate::error::{Error, Result};

/// One objective evaluation. Initial design points have `step == 0`;
/// loop iterations are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    pub x: Vec<f64>,
    pub y: f64,
    /// `f_max` minus the best `y` observed so far, this row included.
    pub regret: f64,
    /// Wall-clock time spent choosing and evaluating this point.
    pub elapsed_ms: f64,
}

/// All observations of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub function: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub observations: Vec<Observation>,
    /// Set when the run stopped early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RegretTrace {
    pub fn initial_points(&self) -> usize {
        self.observations.iter().filter(|o| o.step == 0).count()
    }

    /// Loop iterations completed.
    pub fn steps(&self) -> usize {
        self.observations.iter().filter(|o| o.step > 0).count()
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }

    /// `r_t` for `t = 1..=steps`, as recorded.
    pub fn step_regrets(&self) -> Vec<f64> {
        self.observations
            .iter()
            .filter(|o| o.step > 0)
            .map(|o| o.regret)
            .collect()
    }
}

/// Running regret `f_max − max(y_1..y_t)` for every prefix of `values`.
pub fn regret_curve(values: &[f64], f_max: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("regret of an empty trace"));
    }
    if !f_max.is_finite() {
        return Err(Error::invalid(format!("f_max must be finite, got {f_max}")));
    }
    let mut best = f64::NEG_INFINITY;
    Ok(values
        .iter()
        .map(|&y| {
            best = best.max(y);
            f_max - best
        })
        .collect())
}

/// Mean cumulative regret over a window of steps, across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    /// First step, 1-based.
    pub start: usize,
    /// Last step, inclusive.
    pub end: usize,
    pub mean: f64,
    /// Standard deviation of the mean across seeds.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub function: String,
    pub policy: PolicyKind,
    pub seeds: usize,
    pub windows: Vec<WindowStat>,
    /// Mean regret after the last step.
    pub final_regret: f64,
    pub final_regret_std_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

impl ResultTable {
    pub fn row(&self, function: &str, policy: PolicyKind) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.function == function && r.policy == policy)
    }
}

/// The two halves of a run, `1..=⌊T/2⌋` and `⌊T/2⌋+1..=T`.
pub fn default_windows(steps: usize) -> Vec<(usize, usize)> {
    let half = steps / 2;
    if half == 0 {
        return vec![(1, steps)];
    }
    vec![(1, half), (half + 1, steps)]
}

fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn group(traces: &[RegretTrace]) -> BTreeMap<(String, &'static str), Vec<&RegretTrace>> {
    let mut groups: BTreeMap<(String, &'static str), Vec<&RegretTrace>> = BTreeMap::new();
    for t in traces {
        groups
            .entry((t.function.clone(), t.policy.as_str()))
            .or_default()
            .push(t);
    }
    groups
}

/// Sums `r_t` over each window per trace, then averages across the traces
/// of each (function, policy) pair. Traces that stopped early are skipped.
pub fn cumulative_table(traces: &[RegretTrace], windows: &[(usize, usize)]) -> Result<ResultTable> {
    if windows.is_empty() {
        return Err(Error::invalid("no regret windows given"));
    }
    for &(start, end) in windows {
        if start == 0 || end < start {
            return Err(Error::invalid(format!("invalid window {start}..={end}")));
        }
    }
    let complete: Vec<RegretTrace> = traces.iter().filter(|t| t.error.is_none()).cloned().collect();
    let mut rows = Vec::new();
    for ((function, _), group) in group(&complete) {
        let curves: Vec<Vec<f64>> = group.iter().map(|t| t.step_regrets()).collect();
        let shortest = curves.iter().map(Vec::len).min().unwrap_or(0);
        let mut stats = Vec::with_capacity(windows.len());
        for &(start, end) in windows {
            if end > shortest {
                return Err(Error::invalid(format!(
                    "window {start}..={end} exceeds the {shortest} steps recorded for {function}/{}",
                    group[0].policy
                )));
            }
            let sums: Vec<f64> = curves.iter().map(|c| c[start - 1..end].iter().sum()).collect();
            let (mean, std_error) = mean_and_std_error(&sums);
            stats.push(WindowStat {
                start,
                end,
                mean,
                std_error,
            });
        }
        let finals: Vec<f64> = curves.iter().map(|c| c[shortest - 1]).collect();
        let (final_regret, final_regret_std_error) = mean_and_std_error(&finals);
        rows.push(TableRow {
            function,
            policy: group[0].policy,
            seeds: group.len(),
            windows: stats,
            final_regret,
            final_regret_std_error,
        });
    }
    Ok(ResultTable { rows })
}

/// Mean regret at one step across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub function: String,
    pub policy: PolicyKind,
    pub step: usize,
    pub mean_regret: f64,
    pub std_error: f64,
    pub seeds: usize,
}

/// Per-step mean regret ± standard error for every (function, policy).
/// Step 0 is the regret after the initial design.
pub fn plot_points(traces: &[RegretTrace]) -> Vec<PlotPoint> {
    let mut out = Vec::new();
    for ((function, _), group) in group(traces) {
        let curves: Vec<Vec<f64>> = group
            .iter()
            .map(|t| {
                let mut c = Vec::with_capacity(t.steps() + 1);
                let init = t.initial_points();
                if init > 0 {
                    c.push(t.observations[init - 1].regret);
                }
                c.extend(t.step_regrets());
                c
            })
            .collect();
        let has_init = group.iter().all(|t| t.initial_points() > 0);
        let longest = curves.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..longest {
            let at: Vec<f64> = curves.iter().filter_map(|c| c.get(i).copied()).collect();
            let (mean_regret, std_error) = mean_and_std_error(&at);
            out.push(PlotPoint {
                function: function.clone(),
                policy: group[0].policy,
                step: if has_init { i } else { i + 1 },
                mean_regret,
                std_error,
                seeds: at.len(),
            });
        }
    }
    out
}
