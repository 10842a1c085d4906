//! Tabu search over a discretized grid of logit coefficients.
//!
//! Each iteration evaluates the ±1-step neighbors of the current point,
//! drops tabu points unless they beat the best so far, and moves to the
//! best remaining one even when that is uphill. Evaluated points are cached;
//! a cache hit costs nothing from the evaluation budget.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::controller::BetaConfig;
use crate::error::{Error, Result};
use crate::metrics::EvacMetrics;
use crate::replication::{replicate, ControlOutput, ReplicationPolicy};
use crate::rng::derive_seed;
use crate::scenario::ScenarioLayout;
use crate::sfm::{run_evacuation, RunConfig};

/// `evac minutes - lambda * avg safety`, or `+inf` for a run that left
/// pedestrians behind.
pub fn fitness(m: &EvacMetrics, lambda: f64) -> f64 {
    if m.viable {
        m.evac_time_minutes() - lambda * m.avg_safety
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub lower: f64,
    pub upper: f64,
    /// Number of grid intervals between the bounds.
    pub steps: u32,
}

impl ParamRange {
    pub const fn new(lower: f64, upper: f64) -> Self {
        ParamRange { lower, upper, steps: 60 }
    }

    pub fn grid_step(&self) -> f64 {
        (self.upper - self.lower) / self.steps as f64
    }

    pub fn value(&self, k: u32) -> f64 {
        if k == self.steps {
            self.upper
        } else {
            self.lower + (self.upper - self.lower) * k as f64 / self.steps as f64
        }
    }

    pub fn snap(&self, x: f64) -> u32 {
        let k = ((x - self.lower) / self.grid_step()).round();
        k.clamp(0.0, self.steps as f64) as u32
    }
}

/// Grid coordinates in `(D, G, E, W, C)` order.
pub type GridPoint = [u32; 5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    #[serde(rename = "beta_D")]
    pub distance: ParamRange,
    #[serde(rename = "beta_G")]
    pub group: ParamRange,
    #[serde(rename = "beta_E")]
    pub excon: ParamRange,
    #[serde(rename = "beta_W")]
    pub width: ParamRange,
    #[serde(rename = "beta_C")]
    pub nochanging: ParamRange,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            distance: ParamRange::new(-30.0, 0.0),
            group: ParamRange::new(-10.0, 10.0),
            excon: ParamRange::new(-5.0, 5.0),
            width: ParamRange::new(0.0, 5.0),
            nochanging: ParamRange::new(0.0, 10.0),
        }
    }
}

impl SearchSpace {
    pub fn ranges(&self) -> [ParamRange; 5] {
        [self.distance, self.group, self.excon, self.width, self.nochanging]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in ["beta_D", "beta_G", "beta_E", "beta_W", "beta_C"].iter().zip(self.ranges()) {
            if !(r.lower < r.upper) || r.steps == 0 {
                return Err(Error::schema(format!("search.{name}"), "need lower < upper and steps > 0"));
            }
        }
        Ok(())
    }

    pub fn to_beta(&self, p: GridPoint) -> BetaConfig {
        let r = self.ranges();
        BetaConfig::from_array(std::array::from_fn(|i| r[i].value(p[i])))
    }

    pub fn snap(&self, beta: &BetaConfig) -> GridPoint {
        let r = self.ranges();
        let b = beta.to_array();
        std::array::from_fn(|i| r[i].snap(b[i]))
    }

    pub fn center(&self) -> GridPoint {
        let r = self.ranges();
        std::array::from_fn(|i| r[i].steps / 2)
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        p.iter().zip(self.ranges()).all(|(&k, r)| k <= r.steps)
    }
}

/// ±1 grid step along each coordinate, clipped to the box.
pub fn neighborhood(x: GridPoint, space: &SearchSpace) -> Vec<GridPoint> {
    let ranges = space.ranges();
    let mut out = Vec::with_capacity(10);
    for i in 0..5 {
        if x[i] > 0 {
            let mut y = x;
            y[i] -= 1;
            out.push(y);
        }
        if x[i] < ranges[i].steps {
            let mut y = x;
            y[i] += 1;
            out.push(y);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabuParams {
    pub tenure: usize,
    pub max_iters: usize,
    /// Maximum number of distinct points evaluated.
    pub budget: usize,
}

impl Default for TabuParams {
    fn default() -> Self {
        TabuParams { tenure: 7, max_iters: 1000, budget: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub viable: bool,
    pub reps: usize,
}

/// Something the search can minimize. `eval_index` counts distinct
/// evaluations and is the natural source of per-candidate seeds.
pub trait Objective {
    fn evaluate(&self, beta: &BetaConfig, eval_index: usize) -> Result<Evaluation>;
}

impl<F> Objective for F
where
    F: Fn(&BetaConfig) -> f64,
{
    fn evaluate(&self, beta: &BetaConfig, _: usize) -> Result<Evaluation> {
        let f = self(beta);
        Ok(Evaluation { fitness: f, viable: f.is_finite(), reps: 1 })
    }
}

/// Replicated evacuation runs scored by `fitness`.
pub struct SimulationObjective<'a> {
    pub layout: &'a ScenarioLayout,
    pub base: RunConfig,
    pub policy: ReplicationPolicy,
    pub lambda: f64,
    pub workers: usize,
}

impl Objective for SimulationObjective<'_> {
    fn evaluate(&self, beta: &BetaConfig, eval_index: usize) -> Result<Evaluation> {
        let policy = ReplicationPolicy { control_output: ControlOutput::Fitness { lambda: self.lambda }, ..self.policy };
        let seed = derive_seed(self.base.seed, eval_index as u64);
        let base = RunConfig { beta: *beta, ..self.base.clone() };
        let samples = replicate(
            &policy,
            seed,
            self.workers,
            |_, s| Ok(fitness(&run_evacuation(self.layout, &RunConfig { seed: s, ..base.clone() })?.metrics, self.lambda)),
            |f| *f,
        )
        .map_err(|e| e.source)?;
        let viable = samples.iter().all(|f| f.is_finite());
        let fit = if viable { crate::stats::mean(&samples) } else { f64::INFINITY };
        Ok(Evaluation { fitness: fit, viable, reps: samples.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub eval_index: usize,
    #[serde(skip)]
    pub point: GridPoint,
    pub beta: BetaConfig,
    pub fitness: f64,
    pub viable: bool,
    /// Best viable fitness after this evaluation; `+inf` before the first.
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    /// Best viable point; `None` if nothing viable was found.
    pub best: Option<(BetaConfig, f64)>,
    pub best_point: Option<GridPoint>,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub diversifications: usize,
}

impl OptimizeResult {
    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }

    pub fn best_or_error(&self) -> Result<(BetaConfig, f64)> {
        self.best.ok_or(Error::NoViableSolution { evaluations: self.evaluations() })
    }
}

struct Search<'o, O: Objective + ?Sized> {
    objective: &'o O,
    space: SearchSpace,
    budget: usize,
    cache: HashMap<GridPoint, Evaluation>,
    trace: Vec<TraceEntry>,
    best: Option<(GridPoint, f64)>,
    iteration: usize,
}

impl<O: Objective + ?Sized> Search<'_, O> {
    fn best_fitness(&self) -> f64 {
        self.best.map_or(f64::INFINITY, |b| b.1)
    }

    /// Fitness of `p`, evaluating it if needed; `None` once the budget is spent.
    fn fitness_of(&mut self, p: GridPoint) -> Result<Option<f64>> {
        if let Some(e) = self.cache.get(&p) {
            return Ok(Some(e.fitness));
        }
        if self.trace.len() >= self.budget {
            return Ok(None);
        }
        let beta = self.space.to_beta(p);
        let eval_index = self.trace.len();
        let e = self.objective.evaluate(&beta, eval_index)?;
        let fitness = if e.viable { e.fitness } else { f64::INFINITY };
        if e.viable && fitness < self.best_fitness() {
            self.best = Some((p, fitness));
        }
        self.trace.push(TraceEntry {
            iteration: self.iteration,
            eval_index,
            point: p,
            beta,
            fitness,
            viable: e.viable,
            best_so_far: self.best_fitness(),
        });
        self.cache.insert(p, Evaluation { fitness, ..e });
        Ok(Some(fitness))
    }
}

pub fn optimize<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    params: &TabuParams,
    start: GridPoint,
) -> Result<OptimizeResult> {
    space.validate()?;
    if params.budget == 0 {
        return Err(Error::schema("optimizer.budget", "must be positive"));
    }
    if !space.contains(start) {
        return Err(Error::schema("optimizer.start", "outside the search grid"));
    }
    let mut s = Search {
        objective,
        space: *space,
        budget: params.budget,
        cache: HashMap::new(),
        trace: Vec::new(),
        best: None,
        iteration: 0,
    };
    let mut current = start;
    s.fitness_of(current)?;
    let mut tabu: VecDeque<GridPoint> = VecDeque::new();
    let mut tenure = params.tenure;
    let mut diversifications = 0;

    'search: while s.iteration < params.max_iters {
        s.iteration += 1;
        let mut scored = Vec::new();
        for c in neighborhood(current, space) {
            match s.fitness_of(c)? {
                Some(f) => scored.push((c, f)),
                None => break 'search,
            }
        }
        if scored.is_empty() {
            break;
        }
        let next = loop {
            let best = s.best_fitness();
            let admissible = scored.iter().filter(|(c, f)| !tabu.contains(c) || *f < best);
            // first minimum in neighborhood order
            let pick = admissible.fold(None, |acc: Option<(GridPoint, f64)>, &(c, f)| match acc {
                Some((_, g)) if g <= f => acc,
                _ => Some((c, f)),
            });
            if let Some((c, _)) = pick {
                break c;
            }
            diversifications += 1;
            tenure /= 2;
            while tabu.len() > tenure {
                tabu.pop_front();
            }
        };
        if tenure > 0 {
            tabu.push_back(current);
            while tabu.len() > tenure {
                tabu.pop_front();
            }
        }
        current = next;
    }

    Ok(OptimizeResult {
        best: s.best.map(|(p, f)| (space.to_beta(p), f)),
        best_point: s.best.map(|(p, _)| p),
        trace: s.trace,
        iterations: s.iteration,
        diversifications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metrics(evac_s: f64, safety: f64, viable: bool) -> EvacMetrics {
        EvacMetrics {
            total_evac_time: evac_s,
            avg_safety: safety,
            safety_variance: 0.0,
            mean_decision_changes: 0.0,
            viable,
            exit_safety: vec![],
            exit_throughput: vec![],
        }
    }

    #[test]
    fn fitness_cases() {
        assert!((fitness(&metrics(600.0, 0.5, true), 1.0) - 9.5).abs() < 1e-12);
        assert_eq!(fitness(&metrics(600.0, 0.5, false), 1.0), f64::INFINITY);
        assert!(fitness(&metrics(600.0, 0.9, true), 1.0) < fitness(&metrics(600.0, 0.5, true), 1.0));
    }

    #[test]
    fn default_space_grid() {
        let s = SearchSpace::default();
        assert!((s.distance.grid_step() - 0.5).abs() < 1e-12);
        assert_eq!(s.to_beta([0, 0, 0, 0, 0]), BetaConfig::new(-30.0, -10.0, -5.0, 0.0, 0.0));
        assert_eq!(s.to_beta([60; 5]), BetaConfig::new(0.0, 10.0, 5.0, 5.0, 10.0));
        let b = BetaConfig::profile("optimal_0db").unwrap();
        let p = s.snap(&b);
        let back = s.to_beta(p).to_array();
        for (i, r) in s.ranges().iter().enumerate() {
            assert!((back[i] - b.to_array()[i]).abs() <= r.grid_step() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn neighborhood_sizes() {
        let s = SearchSpace::default();
        assert_eq!(neighborhood(s.center(), &s).len(), 10);
        assert_eq!(neighborhood([0; 5], &s).len(), 5);
        assert_eq!(neighborhood([60, 0, 60, 0, 60], &s).len(), 5);
        for n in neighborhood([0, 60, 3, 4, 5], &s) {
            assert!(s.contains(n));
        }
    }

    fn quadratic(target: [f64; 5]) -> impl Fn(&BetaConfig) -> f64 {
        move |b: &BetaConfig| b.to_array().iter().zip(target).map(|(x, t)| (x - t).powi(2)).sum()
    }

    fn brute_force_minimizer(space: &SearchSpace, target: [f64; 5]) -> GridPoint {
        // separable: per-coordinate scan of the grid
        let r = space.ranges();
        std::array::from_fn(|i| {
            (0..=r[i].steps)
                .min_by(|&a, &b| (r[i].value(a) - target[i]).abs().total_cmp(&(r[i].value(b) - target[i]).abs()))
                .unwrap()
        })
    }

    #[test]
    fn converges_on_surrogate() {
        let space = SearchSpace::default();
        let target = [-17.723, -2.181, -1.671, 1.064, 2.594];
        let params = TabuParams { tenure: 7, max_iters: 200, budget: 5000 };
        let r = optimize(&quadratic(target), &space, &params, space.center()).unwrap();
        assert_eq!(r.best_point.unwrap(), brute_force_minimizer(&space, target));
    }

    #[test]
    fn tenure_zero_still_converges() {
        let space = SearchSpace::default();
        let target = [-3.3, 4.4, 0.1, 4.9, 9.1];
        let params = TabuParams { tenure: 0, max_iters: 200, budget: 5000 };
        let r = optimize(&quadratic(target), &space, &params, space.center()).unwrap();
        assert_eq!(r.best_point.unwrap(), brute_force_minimizer(&space, target));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn trace_best_is_monotone_and_viable(
            t in prop::array::uniform5(-1.0f64..1.0),
            tenure in 0usize..10,
            budget in 1usize..300,
        ) {
            let space = SearchSpace::default();
            let target: [f64; 5] = std::array::from_fn(|i| {
                let r = space.ranges()[i];
                r.lower + (t[i] + 1.0) / 2.0 * (r.upper - r.lower)
            });
            // a band of the space is "non-viable"
            let f = |b: &BetaConfig| if b.width > 4.0 { f64::INFINITY } else { quadratic(target)(b) };
            let params = TabuParams { tenure, max_iters: 400, budget };
            let r = optimize(&f, &space, &params, space.center()).unwrap();
            prop_assert!(r.trace.len() <= budget);
            let mut last = f64::INFINITY;
            for e in &r.trace {
                prop_assert!(e.best_so_far <= last);
                last = e.best_so_far;
            }
            if let Some((b, fit)) = r.best {
                prop_assert!(fit.is_finite() && b.width <= 4.0);
                prop_assert_eq!(fit, last);
            }
        }
    }

    #[test]
    fn budget_one_gives_single_entry_trace() {
        let space = SearchSpace::default();
        let r = optimize(&quadratic([0.0; 5]), &space, &TabuParams { budget: 1, ..Default::default() }, space.center()).unwrap();
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn nothing_viable_is_reported() {
        let space = SearchSpace::default();
        let never = |_: &BetaConfig| f64::INFINITY;
        let r = optimize(&never, &space, &TabuParams { budget: 30, ..Default::default() }, space.center()).unwrap();
        assert!(r.best.is_none());
        assert_eq!(r.trace.len(), 30);
        assert!(matches!(r.best_or_error(), Err(Error::NoViableSolution { evaluations: 30 })));
    }

    #[test]
    fn all_tabu_triggers_diversification() {
        // constant objective: no candidate ever beats the best, so after a
        // few moves the tiny 1-d box has every neighbor tabu
        let space = SearchSpace {
            distance: ParamRange { lower: 0.0, upper: 1.0, steps: 1 },
            group: ParamRange { lower: 0.0, upper: 1.0, steps: 1 },
            excon: ParamRange { lower: 0.0, upper: 1.0, steps: 1 },
            width: ParamRange { lower: 0.0, upper: 1.0, steps: 1 },
            nochanging: ParamRange { lower: 0.0, upper: 1.0, steps: 1 },
        };
        let flat = |_: &BetaConfig| 1.0;
        let r = optimize(&flat, &space, &TabuParams { tenure: 50, max_iters: 100, budget: 100 }, [0; 5]).unwrap();
        assert!(r.diversifications > 0);
        assert_eq!(r.iterations, 100);
    }

    #[test]
    fn same_inputs_same_trace() {
        let space = SearchSpace::default();
        let f = quadratic([-10.0, 1.0, 2.0, 3.0, 4.0]);
        let p = TabuParams { budget: 80, ..Default::default() };
        let a = optimize(&f, &space, &p, space.center()).unwrap();
        let b = optimize(&f, &space, &p, space.center()).unwrap();
        assert_eq!(a.trace, b.trace);
    }
}
