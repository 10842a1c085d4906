//! Run-level performance measurements and the exit safety model.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{ExitId, ScenarioLayout};

/// Piecewise-linear safety score per exit.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyModel {
    /// `[rho1, rho2, rho3]` per exit, peds/m².
    pub thresholds: Vec<[f64; 3]>,
    pub penalty_slope: f64,
}

pub const DEFAULT_PENALTY_SLOPE: f64 = 20.0;

impl SafetyModel {
    pub fn from_layout(layout: &ScenarioLayout, penalty_slope: f64) -> Result<Self> {
        let m = SafetyModel {
            thresholds: layout.exits.iter().map(|e| e.safety_thresholds).collect(),
            penalty_slope,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_slope > 0.0) {
            return Err(Error::schema("safety.penalty_slope", "must be positive"));
        }
        for (j, t) in self.thresholds.iter().enumerate() {
            if !(t[0] < t[1] && t[1] < t[2]) {
                return Err(Error::schema(format!("exits[{j}].thresholds"), "must be strictly ascending"));
            }
        }
        Ok(())
    }
}

/// 1 up to `rho1`, falling linearly to 0 at `rho2`, then to `-slope` at
/// `rho3` and on below without bound.
pub fn safety_score(density: f64, thresholds: [f64; 3], penalty_slope: f64) -> f64 {
    let [r1, r2, r3] = thresholds;
    if density <= r1 {
        1.0
    } else if density <= r2 {
        (r2 - density) / (r2 - r1)
    } else {
        -penalty_slope * (density - r2) / (r3 - r2)
    }
}

pub fn instantaneous_safety(density: f64, model: &SafetyModel, exit: ExitId) -> f64 {
    safety_score(density, model.thresholds[exit.0], model.penalty_slope)
}

/// Everything post-processing needs from one simulation run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    /// Simulated time of each density sample, s.
    pub sample_times: Vec<f64>,
    /// `[sample][exit]`, peds/m².
    pub exit_densities: Vec<Vec<f64>>,
    /// Exits that count towards safety statistics.
    pub open_exits: Vec<bool>,
    pub total_decision_changes: u64,
    pub peds_ever_present: usize,
    pub end_time: f64,
    pub active_at_end: usize,
    pub exit_throughput: Vec<usize>,
    pub resolutions: u64,
    pub misresolutions: u64,
    pub controller_faults: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvacMetrics {
    /// Seconds until the last pedestrian left, or the deadline.
    pub total_evac_time: f64,
    pub avg_safety: f64,
    pub safety_variance: f64,
    pub mean_decision_changes: f64,
    /// All pedestrians left before the deadline.
    pub viable: bool,
    /// Time-averaged safety per exit; `None` for blocked exits.
    pub exit_safety: Vec<Option<f64>>,
    pub exit_throughput: Vec<usize>,
}

impl EvacMetrics {
    pub fn evac_time_minutes(&self) -> f64 {
        self.total_evac_time / 60.0
    }
}

pub fn finalize_metrics(log: &RunLog, model: &SafetyModel) -> Result<EvacMetrics> {
    if log.exit_densities.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n_exits = log.open_exits.len();
    let n_samples = log.exit_densities.len() as f64;
    let exit_safety: Vec<Option<f64>> = (0..n_exits)
        .map(|j| {
            log.open_exits[j].then(|| {
                log.exit_densities
                    .iter()
                    .map(|row| instantaneous_safety(row[j], model, ExitId(j)))
                    .sum::<f64>()
                    / n_samples
            })
        })
        .collect();
    let open: Vec<f64> = exit_safety.iter().flatten().copied().collect();
    let (avg_safety, safety_variance) = mean_and_population_variance(&open);
    let mean_decision_changes = if log.peds_ever_present == 0 {
        0.0
    } else {
        log.total_decision_changes as f64 / log.peds_ever_present as f64
    };
    Ok(EvacMetrics {
        total_evac_time: log.end_time,
        avg_safety,
        safety_variance,
        mean_decision_changes,
        viable: log.active_at_end == 0,
        exit_safety,
        exit_throughput: log.exit_throughput.clone(),
    })
}

fn mean_and_population_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(0.0))
}

/// Number of consecutive-row color changes per pedestrian in a trajectory
/// log, summed over pedestrians. Rows must be in time order.
pub fn recount_decision_changes<I>(rows: I) -> u64
where
    I: IntoIterator<Item = (usize, ExitId)>,
{
    let mut last: std::collections::HashMap<usize, ExitId> = std::collections::HashMap::new();
    let mut changes = 0;
    for (ped, exit) in rows {
        if let Some(prev) = last.insert(ped, exit) {
            if prev != exit {
                changes += 1;
            }
        }
    }
    changes
}
