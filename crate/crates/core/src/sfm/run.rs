use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{sample_logit, AttributeTable, BetaConfig, ControlSnapshot, Controller, Selection};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::metrics::{finalize_metrics, EvacMetrics, RunLog, SafetyModel, DEFAULT_PENALTY_SLOPE};
use crate::positioning::{resolve_cell, ChannelParams};
use crate::rng::RngStreams;
use crate::scenario::{CellId, ExitId, ScenarioLayout};

use super::{InflowSpec, SfmParams, WorldState};

/// NEF: the arena only empties. EF: two random gates receive external
/// inflows and a third is blocked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[default]
    #[serde(rename = "NEF", alias = "nef")]
    Nef,
    #[serde(rename = "EF", alias = "ef")]
    Ef,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Nef => "NEF",
            ScenarioKind::Ef => "EF",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NEF" => Ok(ScenarioKind::Nef),
            "EF" => Ok(ScenarioKind::Ef),
            _ => Err(Error::schema("kind", format!("expected NEF or EF, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InflowConfig {
    /// Arrivals per minute at each inflow gate (before population scaling).
    pub rate_per_min: f64,
    /// Inflows stop after this many seconds.
    pub duration_s: f64,
}

impl Default for InflowConfig {
    fn default() -> Self {
        InflowConfig { rate_per_min: 120.0, duration_s: 300.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub beta: BetaConfig,
    pub channel: ChannelParams,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub deadline_s: f64,
    /// Multiplies the scenario population and inflow rates.
    pub scale: f64,
    /// Overrides the scaled population when set.
    pub population: Option<usize>,
    pub inflow: InflowConfig,
    pub sfm: SfmParams,
    pub control_period_s: f64,
    pub selection: Selection,
    pub penalty_slope: f64,
    pub exit_density_radius_m: f64,
    pub record_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            beta: BetaConfig::profile("optimal_0db").expect("built-in profile"),
            channel: ChannelParams::default(),
            kind: ScenarioKind::Nef,
            seed: 0,
            deadline_s: 25.0 * 60.0,
            scale: 1.0,
            population: None,
            inflow: InflowConfig::default(),
            sfm: SfmParams::default(),
            control_period_s: 5.0,
            selection: Selection::Sample,
            penalty_slope: DEFAULT_PENALTY_SLOPE,
            exit_density_radius_m: 3.0,
            record_trajectory: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if !self.beta.is_finite() {
            return Err(Error::schema("beta", "coefficients must be finite"));
        }
        if !(self.deadline_s > 0.0) {
            return Err(Error::schema("deadline_s", "must be positive"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::schema("scale", "must be positive"));
        }
        if !(self.sfm.dt > 0.0) {
            return Err(Error::schema("sfm.dt", "must be positive"));
        }
        if !(self.control_period_s >= self.sfm.dt) {
            return Err(Error::schema("control_period_s", "must be at least one time step"));
        }
        if !(self.inflow.rate_per_min >= 0.0) {
            return Err(Error::schema("inflow.rate_per_min", "must be non-negative"));
        }
        if !(self.exit_density_radius_m > 0.0) {
            return Err(Error::schema("exit_density_radius_m", "must be positive"));
        }
        Ok(())
    }

    pub fn population_for(&self, layout: &ScenarioLayout) -> usize {
        self.population
            .unwrap_or_else(|| (layout.population.count as f64 * self.scale).round() as usize)
    }
}

/// Gates drawn for an EF run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EfDraw {
    pub inflow_exits: Vec<ExitId>,
    pub blocked_exit: ExitId,
}

impl EfDraw {
    /// e.g. `in=2;6 blocked=5`, using document exit ids.
    pub fn describe(&self, layout: &ScenarioLayout) -> String {
        let ins: Vec<String> = self.inflow_exits.iter().map(|e| layout.exits[e.0].id.to_string()).collect();
        format!("in={} blocked={}", ins.join(";"), layout.exits[self.blocked_exit.0].id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub ped_id: usize,
    pub x: f64,
    pub y: f64,
    pub believed_cell: CellId,
    pub assigned_exit: ExitId,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: EvacMetrics,
    pub log: RunLog,
    pub trajectory: Option<Vec<TrajectoryRow>>,
    pub ef: Option<EfDraw>,
    pub initial_population: usize,
}

/// One evacuation run, advanced step by step.
pub struct Simulation<'a> {
    layout: &'a ScenarioLayout,
    config: RunConfig,
    world: WorldState,
    controller: Controller,
    safety: SafetyModel,
    flows: Vec<InflowSpec>,
    ef: Option<EfDraw>,
    steps_per_cycle: u64,
    log: RunLog,
    trajectory: Vec<TrajectoryRow>,
    attrs: Option<AttributeTable>,
    speed_range: (f64, f64),
}

const PLACEMENT_SPACING_M: f64 = 0.55;
const PLACEMENT_MARGIN_M: f64 = 0.3;
const PLACEMENT_JITTER_M: f64 = 0.05;

impl<'a> Simulation<'a> {
    /// Places the scenario population at random and runs the first control cycle.
    pub fn new(layout: &'a ScenarioLayout, config: RunConfig) -> Result<Self> {
        let mut sim = Simulation::empty(layout, config)?;
        let n = sim.config.population_for(layout);
        let sites = placement_sites(layout);
        if n > sites.len() {
            return Err(Error::Config(format!(
                "population {n} does not fit the arena ({} sites at {PLACEMENT_SPACING_M} m spacing)",
                sites.len()
            )));
        }
        let rng = &mut sim.world.rng.motion;
        let mut chosen = index::sample(rng, sites.len(), n).into_vec();
        chosen.sort_unstable();
        let (lo, hi) = sim.speed_range;
        for k in chosen {
            let rng = &mut sim.world.rng.motion;
            let jitter = Vec2::new(
                rng.random_range(-PLACEMENT_JITTER_M..PLACEMENT_JITTER_M),
                rng.random_range(-PLACEMENT_JITTER_M..PLACEMENT_JITTER_M),
            );
            let speed = rng.random_range(lo..=hi);
            sim.world.place(sites[k] + jitter, speed);
        }
        sim.control()?;
        Ok(sim)
    }

    /// Starts from explicit `(position, preferred speed)` pairs.
    pub fn with_pedestrians(layout: &'a ScenarioLayout, config: RunConfig, peds: &[(Vec2, f64)]) -> Result<Self> {
        let mut sim = Simulation::empty(layout, config)?;
        for &(p, v) in peds {
            if !layout.is_walkable(p) {
                return Err(Error::OutOfBounds { x: p.x, y: p.y });
            }
            sim.world.place(p, v);
        }
        sim.control()?;
        Ok(sim)
    }

    fn empty(layout: &'a ScenarioLayout, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStreams::new(config.seed);
        let mut open = vec![true; layout.num_exits()];
        let mut flows = Vec::new();
        let ef = match config.kind {
            ScenarioKind::Nef => None,
            ScenarioKind::Ef => {
                let draw = draw_ef_gates(layout, &mut rng.flows)?;
                open[draw.blocked_exit.0] = false;
                flows = draw
                    .inflow_exits
                    .iter()
                    .map(|&exit| InflowSpec { exit, rate_per_min: config.inflow.rate_per_min * config.scale, blocked: false })
                    .collect();
                Some(draw)
            }
        };
        let world = WorldState::new(layout, rng, open.clone(), &config.sfm)?;
        let steps_per_cycle = ((config.control_period_s / config.sfm.dt).round() as u64).max(1);
        let beta = if config.channel.none_mode { BetaConfig::standard_behavior() } else { config.beta };
        let controller = Controller { beta, selection: config.selection };
        let safety = SafetyModel::from_layout(layout, config.penalty_slope)?;
        let speed_range = (layout.population.speed_min, layout.population.speed_max);
        Ok(Simulation {
            layout,
            world,
            controller,
            safety,
            flows,
            ef,
            steps_per_cycle,
            log: RunLog { open_exits: open, exit_throughput: vec![0; layout.num_exits()], ..Default::default() },
            trajectory: Vec::new(),
            attrs: None,
            speed_range,
            config,
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn ef_draw(&self) -> Option<&EfDraw> {
        self.ef.as_ref()
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    fn inflows_pending(&self) -> bool {
        !self.flows.is_empty() && self.world.time < self.config.inflow.duration_s - 1e-9
    }

    /// Everyone has left and no more arrivals are due.
    pub fn is_evacuated(&self) -> bool {
        self.world.active_count() == 0 && !self.inflows_pending()
    }

    pub fn is_finished(&self) -> bool {
        self.is_evacuated() || self.world.time >= self.config.deadline_s - 1e-9
    }

    /// Arrivals, one physics step, and a control cycle when one is due.
    pub fn step(&mut self) -> Result<()> {
        if self.inflows_pending() {
            let born = self.world.inject_inflows(self.layout, &self.flows, self.config.sfm.dt, self.speed_range)?;
            for id in born {
                self.indicate(id)?;
                self.record(id);
            }
        }
        self.world.step(self.layout, &self.config.sfm);
        if self.world.steps % self.steps_per_cycle == 0 && !self.is_finished() {
            self.control()?;
        }
        Ok(())
    }

    fn snapshot(&self) -> (ControlSnapshot, Vec<Option<CellId>>) {
        let layout = self.layout;
        let mut counts = vec![0; layout.num_cells()];
        let cells: Vec<Option<CellId>> = self
            .world
            .pedestrians
            .iter()
            .map(|p| {
                p.active.then(|| {
                    let c = layout.grid.nearest(p.position);
                    counts[c.0] += 1;
                    c
                })
            })
            .collect();
        let snap = ControlSnapshot {
            cell_counts: counts,
            exit_densities: self.world.exit_densities(layout, self.config.exit_density_radius_m),
            open: self.world.open.clone(),
            peds_now: self.world.active_count(),
            peds_initial: self.world.initial_count,
        };
        (snap, cells)
    }

    /// Reallocates colors and updates every active wristband.
    fn control(&mut self) -> Result<()> {
        let (snap, cells) = self.snapshot();
        self.log.sample_times.push(self.world.time);
        self.log.exit_densities.push(snap.exit_densities.clone());
        if self.config.channel.none_mode {
            self.attrs = Some(AttributeTable::build(self.layout, &snap, None)?);
        } else {
            let cycle = self.controller.control_cycle(
                self.layout,
                &snap,
                self.world.allocation.as_ref(),
                &mut self.world.rng.controller,
            );
            match cycle {
                Ok(a) => self.world.allocation = Some(a),
                Err(Error::ControllerFault(_)) if self.world.allocation.is_some() => self.log.controller_faults += 1,
                Err(e) => return Err(e),
            }
        }
        for (id, cell) in cells.into_iter().enumerate() {
            if let Some(c) = cell {
                self.indicate_from(id, c)?;
                self.record(id);
            }
        }
        Ok(())
    }

    fn indicate(&mut self, id: usize) -> Result<()> {
        let c = self.world.true_cell(self.layout, id);
        self.indicate_from(id, c)
    }

    /// Resolves the believed cell and shows the resulting color.
    fn indicate_from(&mut self, id: usize, true_cell: CellId) -> Result<()> {
        let world = &mut self.world;
        let ped = &mut world.pedestrians[id];
        if self.config.channel.none_mode {
            let attrs = self.attrs.as_ref().expect("attributes computed at the first cycle");
            let row = attrs.utility_row(&self.controller.beta, true_cell.0, ped.assigned_exit);
            let col = sample_logit(&row, &mut world.rng.controller)?;
            ped.believed_cell = Some(true_cell);
            ped.indicate(attrs.open_exits[col]);
        } else {
            let believed = resolve_cell(ped.position, self.layout, &self.config.channel, &mut world.rng.channel);
            self.log.resolutions += 1;
            if believed != true_cell {
                self.log.misresolutions += 1;
            }
            let allocation = world.allocation.as_ref().expect("allocation computed at the first cycle");
            ped.believed_cell = Some(believed);
            ped.indicate(allocation.exit_of(believed));
        }
        Ok(())
    }

    fn record(&mut self, id: usize) {
        if !self.config.record_trajectory {
            return;
        }
        let p = &self.world.pedestrians[id];
        if let (Some(c), Some(e)) = (p.believed_cell, p.assigned_exit) {
            self.trajectory.push(TrajectoryRow {
                time: self.world.time,
                ped_id: id,
                x: p.position.x,
                y: p.position.y,
                believed_cell: c,
                assigned_exit: e,
            });
        }
    }

    pub fn run(mut self) -> Result<RunOutput> {
        while !self.is_finished() {
            self.step()?;
        }
        self.finish()
    }

    /// Closes the run log and computes the metrics.
    pub fn finish(mut self) -> Result<RunOutput> {
        let active = self.world.active_count();
        let last_out = self.world.pedestrians.iter().filter_map(|p| p.evac_time).fold(0.0, f64::max);
        self.log.end_time = if active == 0 { last_out } else { self.config.deadline_s };
        self.log.active_at_end = active;
        self.log.peds_ever_present = self.world.pedestrians.len();
        self.log.total_decision_changes = self.world.pedestrians.iter().map(|p| u64::from(p.decision_changes)).sum();
        self.log.exit_throughput = self.world.exit_throughput.clone();
        let metrics = finalize_metrics(&self.log, &self.safety)?;
        Ok(RunOutput {
            metrics,
            log: self.log,
            trajectory: self.config.record_trajectory.then_some(self.trajectory),
            ef: self.ef,
            initial_population: self.world.initial_count,
        })
    }
}

/// Runs a full evacuation of the scenario population.
pub fn run_evacuation(layout: &ScenarioLayout, config: &RunConfig) -> Result<RunOutput> {
    Simulation::new(layout, config.clone())?.run()
}

fn draw_ef_gates<R: Rng + ?Sized>(layout: &ScenarioLayout, rng: &mut R) -> Result<EfDraw> {
    let entries: Vec<ExitId> = (0..layout.num_exits())
        .filter(|&j| layout.exits[j].entry_point.is_some())
        .map(ExitId)
        .collect();
    if entries.len() < 2 || layout.num_exits() < 4 {
        return Err(Error::Config(
            "EF runs need at least two exits with entry points and four exits in total".into(),
        ));
    }
    let inflow_exits: Vec<ExitId> = index::sample(rng, entries.len(), 2).into_iter().map(|k| entries[k]).collect();
    let rest: Vec<ExitId> = (0..layout.num_exits()).map(ExitId).filter(|e| !inflow_exits.contains(e)).collect();
    let blocked_exit = rest[rng.random_range(0..rest.len())];
    Ok(EfDraw { inflow_exits, blocked_exit })
}

/// Lattice points far enough from every wall and gate to start on.
fn placement_sites(layout: &ScenarioLayout) -> Vec<Vec2> {
    let (lo, hi) = layout.walkable_polygon.bounding_box();
    let mut edges = layout.walls.clone();
    edges.extend(layout.exits.iter().map(|g| g.segment));
    let mut sites = Vec::new();
    let mut y = lo.y + PLACEMENT_MARGIN_M;
    while y <= hi.y - PLACEMENT_MARGIN_M {
        let mut x = lo.x + PLACEMENT_MARGIN_M;
        while x <= hi.x - PLACEMENT_MARGIN_M {
            let p = Vec2::new(x, y);
            if layout.is_walkable(p) && edges.iter().all(|e| e.distance(p) >= PLACEMENT_MARGIN_M) {
                sites.push(p);
            }
            x += PLACEMENT_SPACING_M;
        }
        y += PLACEMENT_SPACING_M;
    }
    sites
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::recount_decision_changes;
    use crate::scenario::load_scenario;

    fn one_exit_room() -> ScenarioLayout {
        load_scenario(
            r#"
            [arena]
            polygon = [[0.0, -1.5], [18.0, -1.5], [18.0, 1.5], [0.0, 1.5]]
            [[exits]]
            id = 1
            position = [18.0, 0.0]
            width_m = 2.0
            critical_density = 2.2
            [grid]
            cell_width_m = 6.0
            centers = [[3.0, 0.0], [9.0, 0.0], [15.0, 0.0]]
            [population]
            count = 1
            speed_min = 1.3
            speed_max = 1.3
            "#,
        )
        .unwrap()
    }

    #[test]
    fn lone_pedestrian_is_viable_with_free_walk_time() {
        let layout = one_exit_room();
        let config = RunConfig::default();
        let sim = Simulation::with_pedestrians(&layout, config, &[(Vec2::new(5.0, 0.0), 1.3)]).unwrap();
        let out = sim.run().unwrap();
        assert!(out.metrics.viable);
        let expected = 13.0 / 1.3 + 0.5;
        assert!((out.metrics.total_evac_time - expected).abs() / expected < 0.02);
        assert_eq!(out.metrics.mean_decision_changes, 0.0);
    }

    #[test]
    fn tiny_deadline_is_not_viable() {
        let layout = ScenarioLayout::reference();
        let config = RunConfig { deadline_s: 0.1, ..Default::default() };
        let out = run_evacuation(&layout, &config).unwrap();
        assert!(!out.metrics.viable);
        assert_eq!(out.initial_population, 3400);
        assert_eq!(out.metrics.total_evac_time, 0.1);
    }

    #[test]
    fn every_cell_gets_an_open_exit_at_full_scale() {
        let layout = ScenarioLayout::reference();
        let config = RunConfig { kind: ScenarioKind::Ef, seed: 5, deadline_s: 0.05, ..Default::default() };
        let sim = Simulation::new(&layout, config).unwrap();
        let blocked = sim.ef_draw().unwrap().blocked_exit;
        let a = sim.world().allocation.as_ref().unwrap();
        assert_eq!(a.exits.len(), 42);
        assert!(a.exits.iter().all(|&e| e != blocked));
    }

    #[test]
    fn desk_scale_run_is_deterministic() {
        let layout = ScenarioLayout::reference();
        let config = RunConfig { scale: 0.05, seed: 11, sfm: SfmParams::default(), record_trajectory: true, ..Default::default() };
        let a = run_evacuation(&layout, &config).unwrap();
        let b = run_evacuation(&layout, &config).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.trajectory, b.trajectory);
        assert!(a.metrics.viable);
    }

    #[test]
    fn decision_changes_match_trajectory_recount() {
        let layout = ScenarioLayout::reference();
        let config = RunConfig {
            scale: 0.05,
            seed: 3,
            channel: ChannelParams::with_sigma(20.0),
            record_trajectory: true,
            ..Default::default()
        };
        let out = run_evacuation(&layout, &config).unwrap();
        let rows = out.trajectory.unwrap();
        let recount = recount_decision_changes(rows.iter().map(|r| (r.ped_id, r.assigned_exit)));
        assert_eq!(recount, out.log.total_decision_changes);
        assert!(recount > 0);
    }

    #[test]
    fn zero_sigma_never_misresolves() {
        let layout = ScenarioLayout::reference();
        let config = RunConfig { scale: 0.05, seed: 9, ..Default::default() };
        let out = run_evacuation(&layout, &config).unwrap();
        assert!(out.log.resolutions > 0);
        assert_eq!(out.log.misresolutions, 0);
    }

    #[test]
    fn unguided_baseline_completes() {
        let layout = ScenarioLayout::reference();
        let config = RunConfig { scale: 0.05, seed: 4, channel: ChannelParams::unguided(), ..Default::default() };
        let out = run_evacuation(&layout, &config).unwrap();
        assert!(out.metrics.viable);
        assert_eq!(out.log.resolutions, 0);
    }

    #[test]
    fn ef_run_conserves_pedestrians() {
        let layout = ScenarioLayout::reference();
        let config = RunConfig {
            kind: ScenarioKind::Ef,
            scale: 0.05,
            seed: 2,
            inflow: InflowConfig { rate_per_min: 120.0, duration_s: 30.0 },
            ..Default::default()
        };
        let mut sim = Simulation::new(&layout, config).unwrap();
        while !sim.is_finished() {
            sim.step().unwrap();
            assert!(sim.world().is_conserved());
        }
        assert!(sim.world().injected > 0);
        let draw = sim.ef_draw().unwrap().clone();
        assert_eq!(draw.inflow_exits.len(), 2);
        assert!(!draw.inflow_exits.contains(&draw.blocked_exit));
        assert!(draw.inflow_exits.iter().all(|e| layout.exits[e.0].entry_point.is_some()));
        let out = sim.finish().unwrap();
        assert_eq!(out.metrics.exit_throughput[draw.blocked_exit.0], 0);
        assert_eq!(out.metrics.exit_safety[draw.blocked_exit.0], None);
    }

    #[test]
    fn full_population_fits_the_reference_arena() {
        let layout = ScenarioLayout::reference();
        assert!(placement_sites(&layout).len() >= 3400);
    }

    #[test]
    fn kind_parses() {
        assert_eq!("ef".parse::<ScenarioKind>().unwrap(), ScenarioKind::Ef);
        assert_eq!("NEF".parse::<ScenarioKind>().unwrap(), ScenarioKind::Nef);
        assert!("x".parse::<ScenarioKind>().is_err());
    }
}
