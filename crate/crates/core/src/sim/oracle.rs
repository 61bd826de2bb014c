//! Pure-pursuit demonstration driver: the synthetic stand-in for the human
//! at the transmitter. Steers toward a lookahead point on the centerline
//! (optionally offset laterally for recovery-data laps).

use super::track::Track;
use super::vehicle::{clamp_steering, VehicleConfig, VehicleState};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub lookahead: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { lookahead: 0.4 }
    }
}

/// Sinusoidal lateral path offset used for recovery-demonstration laps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Perturbation {
    /// Peak lateral offset, meters.
    pub amplitude: f64,
    /// Wavelength along the track, meters.
    pub period: f64,
    /// Phase in radians (varied per lap).
    pub phase: f64,
}

impl Perturbation {
    pub fn offset_at(&self, s: f64) -> f64 {
        self.amplitude * (2.0 * std::f64::consts::PI * s / self.period + self.phase).sin()
    }
}

/// Steering command tracking the centerline: positive = right turn.
///
/// `direction_sign` is +1 when driving toward increasing arc length and −1
/// for the reverse direction.
pub fn oracle_steering(
    track: &Track,
    state: &VehicleState,
    lookahead: f64,
    direction_sign: f64,
    perturbation: Option<&Perturbation>,
    vehicle: &VehicleConfig,
) -> f64 {
    let s_target = state.s + direction_sign * lookahead;
    let (mut tx, mut ty, th) = track.pose_at(s_target);
    if let Some(p) = perturbation {
        let off = p.offset_at(track.wrap_s(s_target));
        // Offset along the local right-hand normal.
        tx += off * -th.sin();
        ty += off * th.cos();
    }
    // Bearing to the target in the vehicle frame; positive bearing is
    // toward the vehicle's right-hand side in this track frame.
    let dx = tx - state.x;
    let dy = ty - state.y;
    let (sin_h, cos_h) = state.heading.sin_cos();
    let fwd = dx * cos_h + dy * sin_h;
    let lat = -dx * sin_h + dy * cos_h;
    let alpha = lat.atan2(fwd);
    let kappa = 2.0 * alpha.sin() / lookahead;
    let delta = (kappa * vehicle.wheelbase).atan();
    clamp_steering(100.0 * delta / vehicle.delta_max_deg.to_radians())
}
