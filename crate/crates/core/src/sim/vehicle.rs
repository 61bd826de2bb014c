//! Kinematic bicycle stand-in for the scaled vehicle, plus cone-strike
//! detection against the vehicle footprint.

use super::track::Track;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleConfig {
    pub wheelbase: f64,
    /// Full-lock front wheel angle in degrees; ±100 steering maps onto it.
    pub delta_max_deg: f64,
    /// Speed at throttle 1.0, m/s.
    pub v_max: f64,
    pub footprint_length: f64,
    pub footprint_width: f64,
    /// Distance from the rear axle back to the rear bumper.
    pub rear_overhang: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        VehicleConfig {
            wheelbase: 0.33,
            delta_max_deg: 30.0,
            v_max: 1.6,
            footprint_length: 0.42,
            footprint_width: 0.26,
            rear_overhang: 0.08,
        }
    }
}

/// Vehicle pose and motion state. Position is the rear axle center;
/// positive steering turns toward positive heading rate (a right turn in
/// the track's clockwise frame).
#[derive(Clone, Copy, Debug)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steering_cmd: f64,
    /// Nearest centerline arc length.
    pub s: f64,
}

impl VehicleState {
    /// Place the vehicle on the centerline at arc length `s`, facing along
    /// increasing (`forward = true`) or decreasing arc length.
    pub fn on_centerline(track: &Track, s: f64, forward: bool) -> Self {
        let (x, y, heading) = track.pose_at(s);
        let heading = if forward {
            heading
        } else {
            heading + std::f64::consts::PI
        };
        VehicleState {
            x,
            y,
            heading,
            speed: 0.0,
            steering_cmd: 0.0,
            s: track.wrap_s(s),
        }
    }
}

pub fn clamp_steering(cmd: f64) -> f64 {
    cmd.clamp(-100.0, 100.0)
}

/// One kinematic step. Throttle (0..1) commands speed directly; steering is
/// clamped to ±100 and mapped linearly onto the wheel-angle range.
pub fn step_vehicle(
    track: &Track,
    state: &VehicleState,
    steering_cmd: f64,
    throttle: f64,
    dt: f64,
    config: &VehicleConfig,
) -> VehicleState {
    let cmd = clamp_steering(steering_cmd);
    let delta = cmd / 100.0 * config.delta_max_deg.to_radians();
    let speed = throttle.clamp(0.0, 1.0) * config.v_max;
    let x = state.x + speed * state.heading.cos() * dt;
    let y = state.y + speed * state.heading.sin() * dt;
    let heading = state.heading + speed / config.wheelbase * delta.tan() * dt;
    let s = track.project(x, y, state.s);
    VehicleState {
        x,
        y,
        heading,
        speed,
        steering_cmd: cmd,
        s,
    }
}

/// True iff any cone center lies strictly inside the vehicle's oriented
/// footprint rectangle inflated by the cone radius.
pub fn detect_cone_strike(track: &Track, state: &VehicleState, config: &VehicleConfig) -> bool {
    let half_len = config.footprint_length / 2.0;
    let half_wid = config.footprint_width / 2.0;
    // Footprint center sits ahead of the rear axle.
    let center_fwd = half_len - config.rear_overhang;
    let (sin_h, cos_h) = state.heading.sin_cos();
    let cx = state.x + center_fwd * cos_h;
    let cy = state.y + center_fwd * sin_h;
    let inflate = track.config.cone_radius;
    let reach2 = {
        let r = half_len + inflate + 0.05;
        r * r
    };
    for cone in &track.cones {
        let dx = cone.x - cx;
        let dy = cone.y - cy;
        if dx * dx + dy * dy > reach2 {
            continue;
        }
        // Into the footprint frame.
        let lon = dx * cos_h + dy * sin_h;
        let lat = -dx * sin_h + dy * cos_h;
        if lon.abs() < half_len + inflate && lat.abs() < half_wid + inflate {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::track::{build_track, TrackConfig};

    fn track() -> Track {
        build_track(&TrackConfig::default()).unwrap()
    }

    #[test]
    fn zero_steering_keeps_heading() {
        let t = track();
        let cfg = VehicleConfig::default();
        let mut st = VehicleState::on_centerline(&t, 0.5, true);
        let h0 = st.heading;
        for _ in 0..100 {
            st = step_vehicle(&t, &st, 0.0, 0.6, 0.01, &cfg);
        }
        assert!((st.heading - h0).abs() < 1e-12);
        assert!(st.x > 0.5, "vehicle should advance");
    }

    #[test]
    fn constant_command_traces_the_analytic_circle() {
        let t = track();
        let cfg = VehicleConfig::default();
        let cmd = 60.0;
        let delta = cmd / 100.0 * cfg.delta_max_deg.to_radians();
        let radius = cfg.wheelbase / delta.tan();
        // Start on a straight; compare against the circle through the start
        // pose with that radius. Center is at +90° from heading.
        let st0 = VehicleState::on_centerline(&t, 1.0, true);
        // Center perpendicular to heading on the turn side.
        let center = (
            st0.x - radius * st0.heading.sin(),
            st0.y + radius * st0.heading.cos(),
        );
        let mut st = st0;
        let dt = 1e-3;
        let steps = (2.0 * std::f64::consts::PI * radius / (0.5 * cfg.v_max) / dt) as usize;
        let mut max_err: f64 = 0.0;
        for _ in 0..steps {
            st = step_vehicle(&t, &st, cmd, 0.5, dt, &cfg);
            let r = ((st.x - center.0).powi(2) + (st.y - center.1).powi(2)).sqrt();
            max_err = max_err.max((r - radius).abs());
        }
        assert!(max_err < 1e-3, "circle deviation {max_err}");
    }

    #[test]
    fn oversized_command_is_clamped() {
        let t = track();
        let cfg = VehicleConfig::default();
        let st = VehicleState::on_centerline(&t, 0.0, true);
        let next = step_vehicle(&t, &st, 250.0, 0.5, 0.05, &cfg);
        assert_eq!(next.steering_cmd, 100.0);
        let next = step_vehicle(&t, &st, -250.0, 0.5, 0.05, &cfg);
        assert_eq!(next.steering_cmd, -100.0);
    }

    #[test]
    fn speed_is_throttle_only() {
        let t = track();
        let cfg = VehicleConfig::default();
        let st = VehicleState::on_centerline(&t, 0.0, true);
        let a = step_vehicle(&t, &st, 0.0, 0.5, 0.05, &cfg);
        let b = step_vehicle(&t, &st, 90.0, 0.5, 0.05, &cfg);
        assert_eq!(a.speed, b.speed, "steering must never change speed");
        assert_eq!(a.speed, 0.5 * cfg.v_max);
    }

    #[test]
    fn centerline_running_never_strikes() {
        let t = track();
        let cfg = VehicleConfig::default();
        let mut s = 0.0;
        while s < t.total_length {
            let st = VehicleState::on_centerline(&t, s, true);
            assert!(
                !detect_cone_strike(&t, &st, &cfg),
                "strike on centerline at s={s}"
            );
            s += 0.2;
        }
    }

    #[test]
    fn sitting_on_a_cone_strikes() {
        let t = track();
        let cfg = VehicleConfig::default();
        let cone = t.cones[3];
        let st = VehicleState {
            x: cone.x,
            y: cone.y,
            heading: 0.3,
            speed: 0.0,
            steering_cmd: 0.0,
            s: 0.0,
        };
        assert!(detect_cone_strike(&t, &st, &cfg));
    }

    #[test]
    fn grazing_at_the_inflated_boundary_is_not_a_strike() {
        let t = track();
        let cfg = VehicleConfig::default();
        let cone = t.cones[0];
        // Place the vehicle so the cone sits exactly on the inflated edge.
        let half_wid = cfg.footprint_width / 2.0;
        let inflate = t.config.cone_radius;
        let center_fwd = cfg.footprint_length / 2.0 - cfg.rear_overhang;
        let st = VehicleState {
            x: cone.x - center_fwd,
            y: cone.y - (half_wid + inflate),
            heading: 0.0,
            speed: 0.0,
            steering_cmd: 0.0,
            s: 0.0,
        };
        assert!(
            !detect_cone_strike(&t, &st, &cfg),
            "boundary contact must count as clear (strict interior)"
        );
    }
}
