use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::CellAllocation;
use crate::error::{Error, Result};
use crate::geometry::{Segment, Vec2};
use crate::rng::RngStreams;
use crate::scenario::{CellId, ExitId, ScenarioLayout};

use super::force::social_force;
use super::{PedestrianState, SfmParams, SpatialHash};

/// External arrivals through one gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflowSpec {
    pub exit: ExitId,
    pub rate_per_min: f64,
    pub blocked: bool,
}

const PARALLEL_THRESHOLD: usize = 512;
const SPAWN_JITTER_M: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub steps: u64,
    /// Every pedestrian ever present, indexed by id.
    pub pedestrians: Vec<PedestrianState>,
    pub allocation: Option<CellAllocation>,
    pub rng: RngStreams,
    /// `false` for blocked gates, which behave as walls.
    pub open: Vec<bool>,
    pub walls: Vec<Segment>,
    pub initial_count: usize,
    pub injected: usize,
    pub evacuated: usize,
    pub exit_throughput: Vec<usize>,
    hash: SpatialHash,
    active: Vec<usize>,
    forces: Vec<Vec2>,
}

impl WorldState {
    pub fn new(layout: &ScenarioLayout, rng: RngStreams, open: Vec<bool>, params: &SfmParams) -> Result<Self> {
        if open.len() != layout.num_exits() {
            return Err(Error::Config(format!("open mask has {} entries for {} exits", open.len(), layout.num_exits())));
        }
        let mut walls = layout.walls.clone();
        walls.extend(layout.exits.iter().zip(&open).filter(|(_, &o)| !o).map(|(g, _)| g.segment));
        let (lo, hi) = layout.walkable_polygon.bounding_box();
        let pad = Vec2::new(1.0, 1.0);
        Ok(WorldState {
            time: 0.0,
            steps: 0,
            pedestrians: Vec::new(),
            allocation: None,
            rng,
            exit_throughput: vec![0; open.len()],
            open,
            walls,
            initial_count: 0,
            injected: 0,
            evacuated: 0,
            hash: SpatialHash::new(lo - pad, hi + pad, params.cutoff),
            active: Vec::new(),
            forces: Vec::new(),
        })
    }

    fn push(&mut self, position: Vec2, speed: f64) -> usize {
        let id = self.pedestrians.len();
        self.pedestrians.push(PedestrianState::new(id, position, speed, self.time));
        id
    }

    /// Adds a pedestrian present from the start.
    pub fn place(&mut self, position: Vec2, speed: f64) -> usize {
        self.initial_count += 1;
        self.push(position, speed)
    }

    pub fn active_count(&self) -> usize {
        self.pedestrians.len() - self.evacuated
    }

    pub fn is_conserved(&self) -> bool {
        self.initial_count + self.injected == self.evacuated + self.pedestrians.iter().filter(|p| p.active).count()
    }

    pub fn true_cell(&self, layout: &ScenarioLayout, id: usize) -> CellId {
        layout.grid.nearest(self.pedestrians[id].position)
    }

    /// Active pedestrians per exit in the inward half-disc of `radius`
    /// around the gate midpoint, divided by the half-disc area.
    pub fn exit_densities(&self, layout: &ScenarioLayout, radius: f64) -> Vec<f64> {
        let area = 0.5 * std::f64::consts::PI * radius * radius;
        let r2 = radius * radius;
        layout
            .exits
            .iter()
            .map(|g| {
                let n = self
                    .pedestrians
                    .iter()
                    .filter(|p| p.active)
                    .filter(|p| {
                        let rel = p.position - g.position;
                        rel.norm_sq() <= r2 && rel.dot(g.inward_normal) >= 0.0
                    })
                    .count();
                n as f64 / area
            })
            .collect()
    }

    /// Poisson arrivals at each inflow gate over `dt` seconds; returns the
    /// ids of the new pedestrians.
    pub fn inject_inflows(
        &mut self,
        layout: &ScenarioLayout,
        flows: &[InflowSpec],
        dt: f64,
        speed_range: (f64, f64),
    ) -> Result<Range<usize>> {
        let first = self.pedestrians.len();
        for flow in flows {
            let gate = layout.exits.get(flow.exit.0).ok_or(Error::InvalidId {
                kind: "exit",
                id: flow.exit.0,
                len: layout.num_exits(),
            })?;
            let entry = gate
                .entry_point
                .ok_or_else(|| Error::Config(format!("exit {} has no entry point for inflows", gate.id)))?;
            if flow.blocked || !(flow.rate_per_min > 0.0) {
                continue;
            }
            let lambda = flow.rate_per_min / 60.0 * dt;
            let n = Poisson::new(lambda)
                .map_err(|e| Error::Config(format!("inflow rate: {e}")))?
                .sample(&mut self.rng.flows) as usize;
            for _ in 0..n {
                let pos = self.jittered(layout, entry);
                let speed = self.rng.flows.random_range(speed_range.0..=speed_range.1);
                self.push(pos, speed);
                self.injected += 1;
            }
        }
        Ok(first..self.pedestrians.len())
    }

    fn jittered(&mut self, layout: &ScenarioLayout, center: Vec2) -> Vec2 {
        for _ in 0..16 {
            let dx: f64 = self.rng.flows.random_range(-1.0..1.0);
            let dy: f64 = self.rng.flows.random_range(-1.0..1.0);
            if dx * dx + dy * dy > 1.0 {
                continue;
            }
            let p = center + Vec2::new(dx, dy) * SPAWN_JITTER_M;
            if layout.is_walkable(p) {
                return p;
            }
        }
        center
    }

    /// Advances every active pedestrian by one step of `params.dt`.
    pub fn step(&mut self, layout: &ScenarioLayout, params: &SfmParams) {
        let dt = params.dt;
        self.active.clear();
        self.active.extend(self.pedestrians.iter().filter(|p| p.active).map(|p| p.id));
        if self.active.is_empty() {
            self.time += dt;
            self.steps += 1;
            return;
        }
        let peds = &self.pedestrians;
        self.hash.rebuild(self.active.iter().map(|&i| (i, peds[i].position)));

        let hash = &self.hash;
        let walls = &self.walls;
        let cutoff2 = params.cutoff * params.cutoff;
        let force_of = |&i: &usize| {
            let p = &peds[i];
            let neighbors = hash
                .near(p.position)
                .map(|j| &peds[j])
                .filter(|q| q.position.distance_sq(p.position) < cutoff2);
            let target = p.assigned_exit.map_or(p.position, |e| layout.exits[e.0].position);
            social_force(p, neighbors, walls, target, params)
        };
        if self.active.len() >= PARALLEL_THRESHOLD {
            self.active.par_iter().map(force_of).collect_into_vec(&mut self.forces);
        } else {
            self.forces.clear();
            self.forces.extend(self.active.iter().map(force_of));
        }

        for (k, &i) in self.active.iter().enumerate() {
            let f = self.forces[k];
            let p = &mut self.pedestrians[i];
            let mut v = p.velocity + f * (dt / params.mass);
            let cap = params.speed_cap * p.preferred_speed;
            let speed = v.norm();
            if speed > cap {
                v = v * (cap / speed);
            }
            let old = p.position;
            let new = old + v * dt;
            let motion = Segment::new(old, new);
            let crossing = layout
                .exits
                .iter()
                .enumerate()
                .filter(|(j, _)| self.open[*j])
                .filter_map(|(j, g)| motion.intersect(&g.segment).map(|t| (t, j)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((t, j)) = crossing {
                p.position = old + (new - old) * t;
                p.velocity = v;
                p.active = false;
                p.evac_time = Some(self.time + t * dt);
                self.evacuated += 1;
                self.exit_throughput[j] += 1;
                continue;
            }
            if layout.is_walkable(new) {
                p.position = new;
                p.velocity = v;
            } else {
                let pos = clamp_inside(layout, old, new);
                p.velocity = slide_along(&self.walls, pos, v);
                p.position = pos;
            }
        }
        self.time += dt;
        self.steps += 1;
    }
}

/// Last walkable point on the segment `old -> new`.
fn clamp_inside(layout: &ScenarioLayout, old: Vec2, new: Vec2) -> Vec2 {
    if !layout.is_walkable(old) {
        return old;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if layout.is_walkable(old + (new - old) * mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    old + (new - old) * lo
}

/// Velocity with its component normal to the nearest wall removed.
fn slide_along(walls: &[Segment], p: Vec2, v: Vec2) -> Vec2 {
    let nearest = walls.iter().min_by(|a, b| a.distance(p).total_cmp(&b.distance(p)));
    match nearest.and_then(|w| (w.b - w.a).normalized()) {
        Some(t) => t * v.dot(t),
        None => Vec2::ZERO,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;

    /// 30 m long corridor, 3 m wide, one 2 m gate at the east end and an
    /// entry point next to the west wall.
    pub(crate) fn corridor() -> ScenarioLayout {
        load_scenario(
            r#"
            [arena]
            polygon = [[0.0, -1.5], [30.0, -1.5], [30.0, 1.5], [0.0, 1.5]]
            [[exits]]
            id = 1
            position = [30.0, 0.0]
            width_m = 2.0
            critical_density = 2.2
            [[exits]]
            id = 2
            position = [0.0, 0.0]
            width_m = 2.0
            critical_density = 2.2
            entry_point = [2.0, 0.0]
            [grid]
            cell_width_m = 6.0
            centers = [[3.0, 0.0], [9.0, 0.0], [15.0, 0.0], [21.0, 0.0], [27.0, 0.0]]
            [population]
            count = 1
            speed_min = 1.3
            speed_max = 1.3
            "#,
        )
        .unwrap()
    }

    fn world(layout: &ScenarioLayout, open: Vec<bool>) -> WorldState {
        WorldState::new(layout, RngStreams::new(1), open, &SfmParams::default()).unwrap()
    }

    #[test]
    fn empty_world_only_advances_time() {
        let layout = corridor();
        let mut w = world(&layout, vec![true, true]);
        w.step(&layout, &SfmParams::default());
        assert!((w.time - 0.05).abs() < 1e-15);
        assert!(w.pedestrians.is_empty());
    }

    #[test]
    fn lone_pedestrian_free_walk_time() {
        let layout = corridor();
        let params = SfmParams::default();
        let mut w = world(&layout, vec![true, true]);
        let id = w.place(Vec2::new(17.0, 0.0), 1.3);
        w.pedestrians[id].assigned_exit = Some(ExitId(0));
        while w.pedestrians[id].active && w.time < 60.0 {
            w.step(&layout, &params);
        }
        let t = w.pedestrians[id].evac_time.unwrap();
        let expected = 13.0 / 1.3 + params.tau;
        assert!((t - expected).abs() / expected < 0.02, "t = {t}");
        assert_eq!(w.exit_throughput, vec![1, 0]);
    }

    #[test]
    fn blocked_gate_absorbs_nobody() {
        let layout = corridor();
        let params = SfmParams::default();
        let mut w = world(&layout, vec![true, false]);
        let id = w.place(Vec2::new(3.0, 0.0), 1.3);
        w.pedestrians[id].assigned_exit = Some(ExitId(1));
        for _ in 0..400 {
            w.step(&layout, &params);
            assert!(layout.is_walkable(w.pedestrians[id].position));
        }
        assert!(w.pedestrians[id].active);
        assert_eq!(w.evacuated, 0);
    }

    #[test]
    fn speed_cap_and_containment_in_a_crowd() {
        let layout = corridor();
        let params = SfmParams::default();
        let mut w = world(&layout, vec![true, true]);
        for i in 0..60 {
            let x = 5.0 + (i % 20) as f64 * 0.5;
            let y = -1.0 + (i / 20) as f64;
            let id = w.place(Vec2::new(x, y), 1.24 + 0.004 * i as f64);
            w.pedestrians[id].assigned_exit = Some(ExitId(i % 2));
        }
        for _ in 0..1200 {
            w.step(&layout, &params);
            for p in w.pedestrians.iter().filter(|p| p.active) {
                assert!(p.velocity.norm() <= 1.3 * p.preferred_speed + 1e-9);
                assert!(layout.is_walkable(p.position));
            }
            assert!(w.is_conserved());
        }
        assert_eq!(w.evacuated, 60);
    }

    #[test]
    fn poisson_inflow_mean() {
        let layout = corridor();
        let flows = [InflowSpec { exit: ExitId(1), rate_per_min: 120.0, blocked: false }];
        let mut w = world(&layout, vec![true, true]);
        let trials = 1000;
        let mut counts = Vec::with_capacity(trials);
        for _ in 0..trials {
            let r = w.inject_inflows(&layout, &flows, 60.0, (1.24, 1.48)).unwrap();
            counts.push(r.len() as f64);
        }
        let mean = counts.iter().sum::<f64>() / trials as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        // standard error of the mean is sqrt(120/1000) ~ 0.35
        assert!((mean - 120.0).abs() < 1.5, "mean {mean}");
        assert!((var / 120.0 - 1.0).abs() < 0.2, "var {var}");
        assert!(w.pedestrians.iter().all(|p| layout.is_walkable(p.position)));
        assert!(w.pedestrians.iter().all(|p| (1.24..=1.48).contains(&p.preferred_speed)));
        assert!(w.is_conserved());
    }

    #[test]
    fn zero_rate_or_blocked_spawns_nothing() {
        let layout = corridor();
        let mut w = world(&layout, vec![true, true]);
        let none = [InflowSpec { exit: ExitId(1), rate_per_min: 0.0, blocked: false }];
        assert!(w.inject_inflows(&layout, &none, 600.0, (1.24, 1.48)).unwrap().is_empty());
        let blocked = [InflowSpec { exit: ExitId(1), rate_per_min: 120.0, blocked: true }];
        assert!(w.inject_inflows(&layout, &blocked, 600.0, (1.24, 1.48)).unwrap().is_empty());
    }

    #[test]
    fn inflow_without_entry_point_is_rejected() {
        let layout = corridor();
        let mut w = world(&layout, vec![true, true]);
        let bad = [InflowSpec { exit: ExitId(0), rate_per_min: 10.0, blocked: false }];
        assert!(matches!(w.inject_inflows(&layout, &bad, 1.0, (1.24, 1.48)), Err(Error::Config(_))));
    }

    #[test]
    fn exit_density_counts_inward_half_disc() {
        let layout = corridor();
        let mut w = world(&layout, vec![true, true]);
        w.place(Vec2::new(29.0, 0.5), 1.3);
        w.place(Vec2::new(28.0, -1.0), 1.3);
        w.place(Vec2::new(26.0, 0.0), 1.3); // 4 m away
        let d = w.exit_densities(&layout, 3.0);
        let area = 0.5 * std::f64::consts::PI * 9.0;
        assert!((d[0] - 2.0 / area).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
    }
}
