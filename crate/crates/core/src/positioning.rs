//! Cell-node to wristband radio channel and the two-step cell resolution.
//!
//! Every control cycle each wristband measures one RSSI value per cell-node.
//! A node closer than the reference distance wins outright; otherwise the
//! strongest reading wins. Shadowing is a zero-mean Gaussian in dB, redrawn
//! independently for every (pedestrian, cell, cycle).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controller::CellAllocation;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{CellId, ExitId, ScenarioLayout};

/// Mean received power as a function of distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PropagationModel {
    /// `-60 log10(d)`: the reference deployment with all constants folded in.
    #[default]
    #[serde(rename = "simplified", alias = "eq6")]
    Simplified,
    /// `P_tx - PL(d0) - 10 eta log10(d / d0)` with free-space `PL(d0)`.
    #[serde(rename = "log_distance", alias = "eq5")]
    LogDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub frequency_mhz: f64,
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    /// Standard deviation of the shadowing term, dB.
    pub sigma_g_db: f64,
    pub model: PropagationModel,
    /// Pedestrians ignore the guidance system entirely.
    pub none_mode: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            frequency_mhz: 2450.0,
            tx_power_dbm: 40.0,
            path_loss_exponent: 5.0,
            reference_distance_m: 1.0,
            sigma_g_db: 0.0,
            model: PropagationModel::Simplified,
            none_mode: false,
        }
    }
}

impl ChannelParams {
    pub fn with_sigma(sigma_g_db: f64) -> Self {
        ChannelParams { sigma_g_db, ..Default::default() }
    }

    /// Baseline in which nobody wears a guided wristband.
    pub fn unguided() -> Self {
        ChannelParams { none_mode: true, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_mhz > 0.0) {
            return Err(Error::schema("channel.frequency_mhz", "must be positive"));
        }
        if !(self.reference_distance_m > 0.0) {
            return Err(Error::schema("channel.reference_distance_m", "must be positive"));
        }
        if !(self.sigma_g_db >= 0.0 && self.sigma_g_db.is_finite()) {
            return Err(Error::schema("channel.sigma_g_db", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Free-space path loss in dB for distance in meters and frequency in MHz.
pub fn free_space_pl(d_m: f64, f_mhz: f64) -> Result<f64> {
    if !(d_m > 0.0) || !(f_mhz > 0.0) {
        return Err(Error::Domain(format!("path loss needs d > 0 and f > 0 (got d={d_m}, f={f_mhz})")));
    }
    Ok(20.0 * d_m.log10() + 20.0 * f_mhz.log10() - 27.55)
}

/// Received power without shadowing, dBm.
pub fn mean_rssi(d_m: f64, params: &ChannelParams) -> f64 {
    match params.model {
        PropagationModel::Simplified => -60.0 * d_m.log10(),
        PropagationModel::LogDistance => {
            let d0 = params.reference_distance_m;
            let pl0 = 20.0 * d0.log10() + 20.0 * params.frequency_mhz.log10() - 27.55;
            params.tx_power_dbm - pl0 - 10.0 * params.path_loss_exponent * (d_m / d0).log10()
        }
    }
}

/// One shadowed RSSI reading at distance `d_m`.
pub fn rssi_sample<R: Rng + ?Sized>(d_m: f64, params: &ChannelParams, rng: &mut R) -> f64 {
    let shadow = if params.sigma_g_db > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        params.sigma_g_db * z
    } else {
        0.0
    };
    mean_rssi(d_m, params) + shadow
}

/// Two-step resolution over precomputed node distances; returns the index of
/// the selected node.
///
/// Nodes within the reference distance short-circuit (nearest wins, no draws).
/// Otherwise the maximum sampled RSSI wins, ties to the lowest index.
pub fn resolve_from_distances<R: Rng + ?Sized>(
    distances: &[f64],
    params: &ChannelParams,
    rng: &mut R,
) -> usize {
    let mut nearest = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[nearest] {
            nearest = i;
        }
    }
    if distances[nearest] < params.reference_distance_m || params.sigma_g_db == 0.0 {
        // With no shadowing the strongest reading is the nearest node.
        return nearest;
    }
    let mut best = 0;
    let mut best_rssi = f64::NEG_INFINITY;
    for (i, &d) in distances.iter().enumerate() {
        let r = rssi_sample(d, params, rng);
        if r > best_rssi {
            best_rssi = r;
            best = i;
        }
    }
    best
}

/// Cell a wristband at `p` believes it is in.
pub fn resolve_cell<R: Rng + ?Sized>(
    p: Vec2,
    layout: &ScenarioLayout,
    params: &ChannelParams,
    rng: &mut R,
) -> CellId {
    let mut distances = [0.0; 64];
    let n = layout.num_cells();
    if n <= distances.len() {
        for (slot, c) in distances.iter_mut().zip(&layout.grid.cells) {
            *slot = c.center.distance(p);
        }
        CellId(resolve_from_distances(&distances[..n], params, rng))
    } else {
        let d: Vec<f64> = layout.grid.cells.iter().map(|c| c.center.distance(p)).collect();
        CellId(resolve_from_distances(&d, params, rng))
    }
}

/// Exit color shown for `believed` under the current allocation.
pub fn resolve_color(believed: CellId, allocation: &CellAllocation) -> ExitId {
    allocation.exit_of(believed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q_function(x: f64) -> f64 {
        0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
    }

    #[test]
    fn free_space_reference_values() {
        assert!((free_space_pl(1.0, 2450.0).unwrap() - 40.2333).abs() < 1e-3);
        assert!((free_space_pl(1.0, 1.0).unwrap() + 27.55).abs() < 1e-12);
        let step = free_space_pl(8.0, 900.0).unwrap() - free_space_pl(4.0, 900.0).unwrap();
        assert!((step - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((step - 6.0206).abs() < 1e-4);
        assert!(matches!(free_space_pl(0.0, 2450.0), Err(Error::Domain(_))));
        assert!(free_space_pl(1.0, -1.0).is_err());
    }

    #[test]
    fn deterministic_rssi_without_shadowing() {
        let p = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(rssi_sample(1.0, &p, &mut rng), 0.0);
        assert_eq!(rssi_sample(10.0, &p, &mut rng), -60.0);
    }

    #[test]
    fn log_distance_model_intercept() {
        let p = ChannelParams { model: PropagationModel::LogDistance, ..Default::default() };
        // 40 dBm - 40.23 dB at 1 m, then -50 dB per decade
        assert!((mean_rssi(1.0, &p) + 0.2333).abs() < 1e-3);
        assert!((mean_rssi(10.0, &p) - mean_rssi(1.0, &p) + 50.0).abs() < 1e-9);
    }

    #[test]
    fn shadowing_moments() {
        let p = ChannelParams::with_sigma(15.0);
        let mut rng = stream(5, Stream::Channel);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| rssi_sample(10.0, &p, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean + 60.0).abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 15.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn shadowing_draws_uncorrelated() {
        let p = ChannelParams::with_sigma(10.0);
        let mut rng = stream(9, Stream::Channel);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| rssi_sample(1.0, &p, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        assert!((cov / var).abs() < 0.01);
    }

    #[test]
    fn short_circuit_ignores_noise() {
        let p = ChannelParams::with_sigma(40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = [6.0, 5.0, 0.5, 7.0, 0.9];
        for _ in 0..1000 {
            assert_eq!(resolve_from_distances(&d, &p, &mut rng), 2);
        }
    }

    #[test]
    fn noiseless_resolution_is_nearest() {
        let p = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(resolve_from_distances(&[4.0, 2.0, 5.0, 4.5], &p, &mut rng), 1);
        assert_eq!(resolve_from_distances(&[3.0, 3.0], &p, &mut rng), 0);
    }

    #[test]
    fn two_cell_error_matches_gaussian_difference() {
        let (d1, d2, sigma): (f64, f64, f64) = (2.0, 4.0, 15.0);
        let expected = q_function(60.0 * (d2 / d1).log10() / (sigma * 2f64.sqrt()));
        assert!((expected - 0.197).abs() < 1e-3);
        let p = ChannelParams::with_sigma(sigma);
        let mut rng = stream(3, Stream::Channel);
        let n = 200_000;
        let wrong = (0..n).filter(|_| resolve_from_distances(&[d1, d2], &p, &mut rng) == 1).count();
        assert!((wrong as f64 / n as f64 - expected).abs() < 0.005);
    }

    #[test]
    fn noiseless_cells_match_ground_truth() {
        let layout = ScenarioLayout::reference();
        let p = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (lo, hi) = layout.walkable_polygon.bounding_box();
        let mut n = 0;
        let mut x = lo.x;
        while x <= hi.x {
            let mut y = lo.y;
            while y <= hi.y {
                let q = Vec2::new(x, y);
                if layout.is_walkable(q) {
                    assert_eq!(resolve_cell(q, &layout, &p, &mut rng), layout.locate_cell_exact(q).unwrap());
                    n += 1;
                }
                y += 0.37;
            }
            x += 0.37;
        }
        assert!(n > 5000);
    }

    #[test]
    fn misclassification_grows_with_sigma() {
        let layout = ScenarioLayout::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<Vec2> = layout
            .grid
            .cells
            .iter()
            .map(|c| c.center + Vec2::new(1.7, 1.1))
            .filter(|&q| layout.is_walkable(q))
            .collect();
        let mut last = -1.0;
        for sigma in [0.0, 5.0, 10.0, 20.0, 40.0] {
            let p = ChannelParams::with_sigma(sigma);
            let trials = 400;
            let mut wrong = 0;
            for &q in &points {
                let truth = layout.locate_cell_exact(q).unwrap();
                for _ in 0..trials {
                    if resolve_cell(q, &layout, &p, &mut rng) != truth {
                        wrong += 1;
                    }
                }
            }
            let rate = wrong as f64 / (trials * points.len()) as f64;
            assert!(rate >= last, "sigma {sigma}: {rate} < {last}");
            last = rate;
        }
        assert!(last > 0.5);
    }
}
