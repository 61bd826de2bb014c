//! Deterministic 2-D stand-in for the physical platform: five-zone cone
//! track, kinematic vehicle, stereo rasterizer, pure-pursuit demonstrator
//! and cone-strike detection.

pub mod camera;
pub mod oracle;
pub mod record;
pub mod track;
pub mod vehicle;

pub use camera::{render_stereo, CameraRig};
pub use oracle::{oracle_steering, OracleConfig, Perturbation};
pub use record::{run_recording_lap, wrap_delta, SimConfig, ThrottleMap};
pub use track::{build_track, Cone, Shade, Track, TrackConfig, ZoneInterval};
pub use vehicle::{clamp_steering, detect_cone_strike, step_vehicle, VehicleConfig, VehicleState};
