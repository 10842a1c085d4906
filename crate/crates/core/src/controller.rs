//! Cell-to-exit allocation by multinomial logit.
//!
//! Each control cycle the controller scores every (cell, open exit) pair with
//! a linear utility over five attributes (distance, width, path congestion,
//! exit congestion, and an inertia term that favours the incumbent exit),
//! then samples one exit per cell from the softmax of those utilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{CellId, ExitId, ScenarioLayout};

/// Logit coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    #[serde(rename = "beta_D")]
    pub distance: f64,
    #[serde(rename = "beta_G")]
    pub group: f64,
    #[serde(rename = "beta_E")]
    pub excon: f64,
    #[serde(rename = "beta_W")]
    pub width: f64,
    #[serde(rename = "beta_C")]
    pub nochanging: f64,
}

/// Named coefficient sets shipped with the crate.
pub const PROFILES: [(&str, BetaConfig); 5] = [
    ("optimal_0db", BetaConfig::new(-17.723, -2.181, -1.671, 1.064, 2.594)),
    ("optimal_5db", BetaConfig::new(-16.040, -3.224, -2.267, 0.0, 6.816)),
    ("optimal_10db", BetaConfig::new(-17.696, -2.0, -2.0, 1.685, 3.0)),
    ("optimal_20db", BetaConfig::new(-28.479, 10.0, -3.083, 0.041, 4.025)),
    ("standard_no_cellevac", BetaConfig::new(-28.0, 0.6, -0.5, 0.6, 0.0)),
];

impl BetaConfig {
    /// Coefficients in `(D, G, E, W, C)` order.
    pub const fn new(distance: f64, group: f64, excon: f64, width: f64, nochanging: f64) -> Self {
        BetaConfig { distance, group, excon, width, nochanging }
    }

    pub fn profile(name: &str) -> Option<BetaConfig> {
        PROFILES.iter().find(|(n, _)| *n == name).map(|(_, b)| *b)
    }

    /// The per-pedestrian coefficients used when nobody follows guidance.
    pub fn standard_behavior() -> BetaConfig {
        BetaConfig::profile("standard_no_cellevac").expect("built-in profile")
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.distance, self.group, self.excon, self.width, self.nochanging]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        BetaConfig::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Flat `beta_X = value` document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let b: BetaConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if !b.is_finite() {
            return Err(Error::schema("beta", "coefficients must be finite"));
        }
        Ok(b)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat table serializes")
    }
}

/// Exit assigned to every cell for one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAllocation {
    pub exits: Vec<ExitId>,
    pub cycle: u64,
    /// Cells whose exit differs from the previous allocation.
    pub changed: Vec<bool>,
}

impl CellAllocation {
    pub fn exit_of(&self, c: CellId) -> ExitId {
        self.exits[c.0]
    }

    pub fn num_changed(&self) -> usize {
        self.changed.iter().filter(|&&c| c).count()
    }
}

/// How a cell's exit is drawn from the logit probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Sample,
    Argmax,
}

/// Ground-truth observations the controller receives each cycle.
#[derive(Debug, Clone)]
pub struct ControlSnapshot {
    /// Active pedestrians per cell.
    pub cell_counts: Vec<usize>,
    /// Density near each exit, peds/m².
    pub exit_densities: Vec<f64>,
    /// `false` for blocked exits.
    pub open: Vec<bool>,
    pub peds_now: usize,
    pub peds_initial: usize,
}

/// `GROUP_cj` for every cell `c`: pedestrians in `c` plus those in cells
/// strictly closer to exit `j` than `c` is.
pub fn group_sizes(cell_counts: &[usize], layout: &ScenarioLayout, j: ExitId) -> Vec<usize> {
    let d = &layout.distance_matrix;
    (0..layout.num_cells())
        .map(|c| {
            let here = d[c][j.0];
            cell_counts[c]
                + (0..layout.num_cells())
                    .filter(|&k| d[k][j.0] < here)
                    .map(|k| cell_counts[k])
                    .sum::<usize>()
        })
        .collect()
}

/// Congestion of a path relative to the least congested one; 0 when empty.
pub fn group_ratio(group: usize, group_min: usize) -> f64 {
    if group == 0 {
        0.0
    } else {
        (group - group_min.min(group)) as f64 / group as f64
    }
}

pub fn excon(density: f64, critical_density: f64) -> f64 {
    density / critical_density
}

/// Inertia weight growing linearly as the arena empties; the population
/// ratio is clamped to 1 so inflows cannot make it negative.
pub fn beta_c_t(beta_c: f64, peds_now: usize, peds_initial: usize) -> f64 {
    if peds_initial == 0 {
        return beta_c;
    }
    let ratio = (peds_now as f64 / peds_initial as f64).min(1.0);
    beta_c * (1.0 - ratio)
}

/// Attribute values for every (cell, open exit) pair.
#[derive(Debug, Clone)]
pub struct AttributeTable {
    /// Column order of every per-exit vector below.
    pub open_exits: Vec<ExitId>,
    pub distance_norm: Vec<Vec<f64>>,
    pub width_norm: Vec<f64>,
    pub group_ratio: Vec<Vec<f64>>,
    pub excon: Vec<f64>,
    /// Exit currently allocated to each cell, if any.
    pub incumbent: Vec<Option<ExitId>>,
    pub peds_now: usize,
    pub peds_initial: usize,
}

impl AttributeTable {
    pub fn build(
        layout: &ScenarioLayout,
        snap: &ControlSnapshot,
        incumbent: Option<&CellAllocation>,
    ) -> Result<Self> {
        let open_exits: Vec<ExitId> = (0..layout.num_exits())
            .filter(|&j| snap.open[j])
            .map(ExitId)
            .collect();
        if open_exits.is_empty() {
            return Err(Error::Config("every exit is blocked".into()));
        }
        let n_cells = layout.num_cells();
        let groups: Vec<Vec<usize>> = open_exits
            .iter()
            .map(|&j| group_sizes(&snap.cell_counts, layout, j))
            .collect();
        let mut group_ratio_m = vec![vec![0.0; open_exits.len()]; n_cells];
        let mut distance_norm = vec![vec![0.0; open_exits.len()]; n_cells];
        for c in 0..n_cells {
            let gmin = groups.iter().map(|g| g[c]).min().unwrap_or(0);
            for (col, &j) in open_exits.iter().enumerate() {
                group_ratio_m[c][col] = group_ratio(groups[col][c], gmin);
                distance_norm[c][col] = layout.distance_matrix[c][j.0] / layout.max_distance;
            }
        }
        let width_norm = open_exits.iter().map(|j| layout.exits[j.0].width / layout.max_width).collect();
        let excon_v = open_exits
            .iter()
            .map(|j| excon(snap.exit_densities[j.0], layout.exits[j.0].critical_density))
            .collect();
        let incumbent = match incumbent {
            Some(a) => a.exits.iter().map(|&e| Some(e)).collect(),
            None => vec![None; n_cells],
        };
        Ok(AttributeTable {
            open_exits,
            distance_norm,
            width_norm,
            group_ratio: group_ratio_m,
            excon: excon_v,
            incumbent,
            peds_now: snap.peds_now,
            peds_initial: snap.peds_initial,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.distance_norm.len()
    }

    /// Utilities of cell `c` over the open exits, with `current` as the
    /// exit flagged by the inertia attribute.
    pub fn utility_row(&self, beta: &BetaConfig, c: usize, current: Option<ExitId>) -> Vec<f64> {
        let bc = beta_c_t(beta.nochanging, self.peds_now, self.peds_initial);
        self.open_exits
            .iter()
            .enumerate()
            .map(|(col, &j)| {
                let keep = if current == Some(j) { 1.0 } else { 0.0 };
                beta.distance * self.distance_norm[c][col]
                    + beta.width * self.width_norm[col]
                    + beta.group * self.group_ratio[c][col]
                    + beta.excon * self.excon[col]
                    + bc * keep
            })
            .collect()
    }
}

/// Utilities `[cell][column]` over `exits`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityMatrix {
    pub exits: Vec<ExitId>,
    pub rows: Vec<Vec<f64>>,
}

pub fn utility(attrs: &AttributeTable, beta: &BetaConfig) -> Result<UtilityMatrix> {
    let rows: Vec<Vec<f64>> = (0..attrs.num_cells())
        .map(|c| attrs.utility_row(beta, c, attrs.incumbent[c]))
        .collect();
    if let Some(c) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::ControllerFault(format!("non-finite utility for cell {c}")));
    }
    Ok(UtilityMatrix { exits: attrs.open_exits.clone(), rows })
}

/// Softmax with max-subtraction; entries of `-inf` get probability 0.
pub fn logit_probabilities(row: &[f64]) -> Result<Vec<f64>> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Config("no selectable exit (all utilities are -inf)".into()));
    }
    let weights: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Index drawn from the logit distribution of `row`.
pub fn sample_logit<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Result<usize> {
    let probs = logit_probabilities(row)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

fn argmax(row: &[f64]) -> Result<usize> {
    let mut best = None;
    for (i, &v) in row.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b: usize| v > row[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::Config("no selectable exit (all utilities are -inf)".into()))
}

/// Draws one exit per cell and records which cells changed exit.
pub fn allocate<R: Rng + ?Sized>(
    v: &UtilityMatrix,
    incumbent: Option<&CellAllocation>,
    selection: Selection,
    rng: &mut R,
) -> Result<CellAllocation> {
    let mut exits = Vec::with_capacity(v.rows.len());
    let mut changed = Vec::with_capacity(v.rows.len());
    for (c, row) in v.rows.iter().enumerate() {
        let col = match selection {
            Selection::Sample => sample_logit(row, rng)?,
            Selection::Argmax => argmax(row)?,
        };
        let j = v.exits[col];
        changed.push(incumbent.is_some_and(|a| a.exits[c] != j));
        exits.push(j);
    }
    let cycle = incumbent.map_or(0, |a| a.cycle + 1);
    Ok(CellAllocation { exits, cycle, changed })
}

/// The allocation policy run every control cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controller {
    pub beta: BetaConfig,
    pub selection: Selection,
}

impl Controller {
    pub fn new(beta: BetaConfig) -> Self {
        Controller { beta, selection: Selection::Sample }
    }

    /// Attributes, utilities and a fresh allocation for the current snapshot.
    pub fn control_cycle<R: Rng + ?Sized>(
        &self,
        layout: &ScenarioLayout,
        snap: &ControlSnapshot,
        incumbent: Option<&CellAllocation>,
        rng: &mut R,
    ) -> Result<CellAllocation> {
        let attrs = AttributeTable::build(layout, snap, incumbent)?;
        let v = utility(&attrs, &self.beta)?;
        allocate(&v, incumbent, self.selection, rng)
    }
}
