//! Microscopic pedestrian dynamics: a Helbing-style social force model with
//! straight-to-gate steering, integrated with a semi-implicit Euler scheme.

mod force;
mod hash;
mod run;
mod world;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scenario::{CellId, ExitId};

pub use force::{driving_force, pair_force, social_force, wall_force};
pub use hash::SpatialHash;
pub use run::{
    run_evacuation, EfDraw, InflowConfig, RunConfig, RunOutput, ScenarioKind, Simulation, TrajectoryRow,
};
pub use world::{InflowSpec, WorldState};

/// Model constants. Defaults are the classic Helbing values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmParams {
    /// kg
    pub mass: f64,
    /// Relaxation time, s.
    pub tau: f64,
    /// Repulsion strength, N.
    pub a: f64,
    /// Repulsion range, m.
    pub b: f64,
    /// Body radius, m.
    pub radius: f64,
    /// Body compression, kg/s².
    pub k: f64,
    /// Sliding friction, kg/(m·s).
    pub kappa: f64,
    /// Cap on any single interaction force, N.
    pub f_max: f64,
    /// Speed limit as a multiple of the preferred speed.
    pub speed_cap: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Interactions beyond this distance are ignored, m.
    pub cutoff: f64,
}

impl Default for SfmParams {
    fn default() -> Self {
        SfmParams {
            mass: 80.0,
            tau: 0.5,
            a: 2000.0,
            b: 0.08,
            radius: 0.25,
            k: 1.2e5,
            kappa: 2.4e5,
            f_max: 1e4,
            speed_cap: 1.3,
            dt: 0.05,
            cutoff: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianState {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    /// m/s
    pub preferred_speed: f64,
    /// Wristband color; `None` until the first indication.
    pub assigned_exit: Option<ExitId>,
    pub believed_cell: Option<CellId>,
    pub decision_changes: u32,
    pub active: bool,
    pub spawn_time: f64,
    pub evac_time: Option<f64>,
}

impl PedestrianState {
    pub fn new(id: usize, position: Vec2, preferred_speed: f64, spawn_time: f64) -> Self {
        PedestrianState {
            id,
            position,
            velocity: Vec2::ZERO,
            preferred_speed,
            assigned_exit: None,
            believed_cell: None,
            decision_changes: 0,
            active: true,
            spawn_time,
            evac_time: None,
        }
    }

    /// Shows a new color, counting a change if one was already shown.
    pub fn indicate(&mut self, exit: ExitId) {
        if self.assigned_exit.is_some_and(|e| e != exit) {
            self.decision_changes += 1;
        }
        self.assigned_exit = Some(exit);
    }
}
