//! Demonstration recording: the pure-pursuit driver laps the track while
//! every frame (stereo image, steering, throttle, frame rate, zone) is
//! logged, optionally tracking a laterally perturbed path so the data set
//! contains recovery behavior.

use super::camera::{render_stereo, CameraRig};
use super::oracle::{oracle_steering, OracleConfig, Perturbation};
use super::track::Track;
use super::vehicle::{detect_cone_strike, step_vehicle, VehicleConfig, VehicleState};
use crate::datalog::{quantize_image, Direction, FrameRecord, LapHeader, LapLog};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-zone throttle fractions (index 0 = zone 1). The demonstrator and the
/// autonomous router share this map; values are config.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ThrottleMap(pub [f64; 5]);

impl Default for ThrottleMap {
    fn default() -> Self {
        ThrottleMap([1.0, 0.7, 0.4, 0.6, 0.5])
    }
}

impl ThrottleMap {
    pub fn for_zone(&self, zone: u8) -> f64 {
        debug_assert!((1..=5).contains(&zone));
        self.0[(zone as usize).clamp(1, 5) - 1]
    }
}

/// Everything the closed loop needs besides the track itself.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub vehicle: VehicleConfig,
    pub rig: CameraRig,
    pub oracle: OracleConfig,
    pub throttle: ThrottleMap,
}

/// Signed arc-length advance, unwrapped across the lap seam.
pub fn wrap_delta(track: &Track, s_new: f64, s_old: f64) -> f64 {
    let mut d = s_new - s_old;
    let half = track.total_length / 2.0;
    if d > half {
        d -= track.total_length;
    } else if d < -half {
        d += track.total_length;
    }
    d
}

/// Record one full demonstration lap. Fails if the oracle itself strikes a
/// cone (a harness bug or an infeasible perturbation, not a data point).
pub fn run_recording_lap(
    track: &Track,
    sim: &SimConfig,
    direction: Direction,
    perturbation: Option<Perturbation>,
    dt: f64,
) -> Result<LapLog> {
    if dt <= 0.0 {
        return Err(Error::parameter("dt must be positive"));
    }
    let sign = direction.sign();
    let mut state = VehicleState::on_centerline(track, 0.0, direction == Direction::Cw);
    let mut frames = Vec::new();
    let mut progress = 0.0;
    let mut prev_s = state.s;
    let max_steps = (8.0 * track.total_length / (0.2 * sim.vehicle.v_max * dt)) as usize;

    for index in 0.. {
        if index >= max_steps {
            return Err(Error::Recording(format!(
                "lap did not complete within {max_steps} steps"
            )));
        }
        let zone = track.zone_of(state.s);
        let throttle = sim.throttle.for_zone(zone);
        let cmd = oracle_steering(
            track,
            &state,
            sim.oracle.lookahead,
            sign,
            perturbation.as_ref(),
            &sim.vehicle,
        );
        let image = render_stereo(track, &state, &sim.rig);
        frames.push(FrameRecord {
            frame_index: index as u32,
            timestamp: index as f64 * dt,
            steering: cmd as f32,
            throttle: throttle as f32,
            frame_rate: (1.0 / dt) as f32,
            zone,
            image: quantize_image(image.data()),
            s: Some(state.s),
        });

        state = step_vehicle(track, &state, cmd, throttle, dt, &sim.vehicle);
        if detect_cone_strike(track, &state, &sim.vehicle) {
            return Err(Error::Recording(format!(
                "oracle struck a cone at s = {:.2} m (frame {index})",
                state.s
            )));
        }
        progress += sign * wrap_delta(track, state.s, prev_s);
        prev_s = state.s;
        if progress >= track.total_length {
            break;
        }
    }

    Ok(LapLog {
        header: LapHeader {
            track_hash: track.hash(),
            direction,
            dt: dt as f32,
            height: sim.rig.image_height as u16,
            width: sim.rig.image_width as u16,
        },
        frames,
    })
}
