//! Replicates a stochastic run until the Student-t confidence interval of
//! its control output is tight enough, within `[min_reps, max_reps]`.
//!
//! Replications execute in batches of `workers`; the stopping rule is only
//! evaluated at batch barriers, so results do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::metrics::EvacMetrics;
use crate::rng::derive_seed;
use crate::scenario::ScenarioLayout;
use crate::sfm::{run_evacuation, EfDraw, RunConfig};
use crate::stats::{mean, sample_variance};

/// Which metric drives the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "metric")]
pub enum ControlOutput {
    #[default]
    EvacTime,
    /// `evac minutes - lambda * avg safety`.
    Fitness { lambda: f64 },
}

impl ControlOutput {
    pub fn value(&self, m: &EvacMetrics) -> f64 {
        match *self {
            ControlOutput::EvacTime => m.total_evac_time,
            ControlOutput::Fitness { lambda } => crate::optimizer::fitness(m, lambda),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationPolicy {
    pub min_reps: usize,
    pub max_reps: usize,
    pub confidence: f64,
    /// Target half-width as a percentage of the mean.
    pub error_percent: f64,
    pub control_output: ControlOutput,
}

impl Default for ReplicationPolicy {
    fn default() -> Self {
        ReplicationPolicy {
            min_reps: 10,
            max_reps: 50,
            confidence: 0.95,
            error_percent: 0.5,
            control_output: ControlOutput::EvacTime,
        }
    }
}

impl ReplicationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_reps < 1 || self.min_reps > self.max_reps {
            return Err(Error::schema("replication.min_reps", "need 1 <= min_reps <= max_reps"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::schema("replication.confidence", "must lie in (0, 1)"));
        }
        if !(self.error_percent > 0.0) {
            return Err(Error::schema("replication.error_percent", "must be positive"));
        }
        Ok(())
    }
}

/// `t_{(1+conf)/2, n-1} * s / sqrt(n)`; infinite for a single sample.
pub fn ci_half_width(samples: &[f64], confidence: f64) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let s = sample_variance(samples).sqrt();
    if s == 0.0 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf((1.0 + confidence) / 2.0);
    t * s / (n as f64).sqrt()
}

/// Relative half-width criterion, absolute when `|mean| < 1`. A non-finite
/// sample stops immediately since no interval can be formed.
pub fn should_stop(samples: &[f64], policy: &ReplicationPolicy) -> bool {
    let n = samples.len();
    if n >= policy.max_reps || samples.iter().any(|x| !x.is_finite()) {
        return true;
    }
    if n < policy.min_reps {
        return false;
    }
    let m = mean(samples);
    let tol = policy.error_percent / 100.0 * if m.abs() < 1.0 { 1.0 } else { m.abs() };
    ci_half_width(samples, policy.confidence) <= tol
}

/// A replication that failed, with every replication completed before it.
#[derive(Debug, thiserror::Error)]
#[error("replication {failed_index} failed: {source}")]
pub struct PartialFailure<T: std::fmt::Debug> {
    pub completed: Vec<T>,
    pub failed_index: usize,
    pub source: Error,
}

impl<T: std::fmt::Debug> From<PartialFailure<T>> for Error {
    fn from(f: PartialFailure<T>) -> Self {
        f.source
    }
}

/// Runs `f(rep_index, seed)` until `should_stop` holds on `key` of the
/// outputs. The first batch has `min_reps` members, later ones `workers`.
pub fn replicate<T, F, K>(
    policy: &ReplicationPolicy,
    seed: u64,
    workers: usize,
    f: F,
    key: K,
) -> Result<Vec<T>, PartialFailure<T>>
where
    T: Send + std::fmt::Debug,
    F: Fn(usize, u64) -> Result<T> + Sync,
    K: Fn(&T) -> f64,
{
    let workers = workers.max(1);
    let mut out: Vec<T> = Vec::new();
    let mut samples = Vec::new();
    loop {
        let n = out.len();
        let batch = if n < policy.min_reps { policy.min_reps - n } else { workers.min(policy.max_reps - n) };
        let results: Vec<Result<T>> = (n..n + batch)
            .into_par_iter()
            .map(|i| f(i, derive_seed(seed, i as u64)))
            .collect();
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok(t) => {
                    samples.push(key(&t));
                    out.push(t);
                }
                Err(source) => return Err(PartialFailure { completed: out, failed_index: n + k, source }),
            }
        }
        if should_stop(&samples, policy) {
            return Ok(out);
        }
    }
}

/// One replication of an evacuation experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub rep: usize,
    pub seed: u64,
    pub metrics: EvacMetrics,
    #[serde(skip)]
    pub ef: Option<EfDraw>,
    pub resolutions: u64,
    pub misresolutions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanVar {
    pub mean: f64,
    pub variance: f64,
}

impl MeanVar {
    fn of(xs: &[f64]) -> Self {
        MeanVar { mean: mean(xs), variance: sample_variance(xs) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub n: usize,
    pub evac_time: MeanVar,
    pub avg_safety: MeanVar,
    pub safety_variance: MeanVar,
    pub decision_changes: MeanVar,
    pub viable_fraction: f64,
    pub records: Vec<RunRecord>,
}

impl RunSummary {
    pub fn from_records(records: Vec<RunRecord>) -> Self {
        let col = |f: fn(&EvacMetrics) -> f64| -> Vec<f64> { records.iter().map(|r| f(&r.metrics)).collect() };
        let viable = records.iter().filter(|r| r.metrics.viable).count();
        RunSummary {
            n: records.len(),
            evac_time: MeanVar::of(&col(|m| m.total_evac_time)),
            avg_safety: MeanVar::of(&col(|m| m.avg_safety)),
            safety_variance: MeanVar::of(&col(|m| m.safety_variance)),
            decision_changes: MeanVar::of(&col(|m| m.mean_decision_changes)),
            viable_fraction: viable as f64 / records.len().max(1) as f64,
            records,
        }
    }

    pub fn column(&self, f: impl Fn(&EvacMetrics) -> f64) -> Vec<f64> {
        self.records.iter().map(|r| f(&r.metrics)).collect()
    }
}

/// Replicates `base` with seeds derived from `base.seed`.
pub fn run_replicated(
    layout: &ScenarioLayout,
    base: &RunConfig,
    policy: &ReplicationPolicy,
    workers: usize,
) -> Result<RunSummary, PartialFailure<RunRecord>> {
    policy
        .validate()
        .map_err(|source| PartialFailure { completed: Vec::new(), failed_index: 0, source })?;
    let records = replicate(
        policy,
        base.seed,
        workers,
        |rep, seed| {
            let config = RunConfig { seed, ..base.clone() };
            let out = run_evacuation(layout, &config)?;
            Ok(RunRecord {
                rep,
                seed,
                metrics: out.metrics,
                ef: out.ef,
                resolutions: out.log.resolutions,
                misresolutions: out.log.misresolutions,
            })
        },
        |r| policy.control_output.value(&r.metrics),
    )?;
    Ok(RunSummary::from_records(records))
}
