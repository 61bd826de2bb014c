//! Stereo pinhole rasterizer: cones as depth-scaled filled discs over a flat
//! ground/sky background, painter's order, no lighting. The networks feed on
//! position, scale, disparity and shade, so nothing fancier is needed.

use super::track::{Shade, Track};
use super::vehicle::VehicleState;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    /// Stereo eye separation, meters.
    pub baseline: f64,
    pub height: f64,
    pub pitch_deg: f64,
    pub hfov_deg: f64,
    pub image_width: usize,
    pub image_height: usize,
    /// Camera position ahead of the rear axle.
    pub forward_offset: f64,
    pub max_range: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            baseline: 0.12,
            height: 0.14,
            pitch_deg: 10.0,
            hfov_deg: 100.0,
            image_width: 168,
            image_height: 94,
            forward_offset: 0.25,
            max_range: 7.0,
        }
    }
}

impl CameraRig {
    pub fn scaled(&self, scale: f64) -> CameraRig {
        CameraRig {
            image_width: ((self.image_width as f64 * scale).round() as usize).max(8),
            image_height: ((self.image_height as f64 * scale).round() as usize).max(8),
            ..*self
        }
    }

    pub fn focal_px(&self) -> f64 {
        (self.image_width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }
}

const SKY: [f32; 3] = [0.56, 0.62, 0.70];
const GROUND: [f32; 3] = [0.24, 0.24, 0.22];
const CONE_LIGHT: [f32; 3] = [1.00, 0.55, 0.15];
const CONE_DARK: [f32; 3] = [0.72, 0.28, 0.06];

/// Render the six-channel stereo frame at the vehicle pose: channels 0-2
/// left RGB, 3-5 right RGB, values in [0, 1].
pub fn render_stereo(track: &Track, state: &VehicleState, rig: &CameraRig) -> Tensor<f32> {
    let (w, h) = (rig.image_width, rig.image_height);
    let mut image = Tensor::zeros(vec![6, h, w]);
    let data = image.data_mut();

    let pitch = rig.pitch_deg.to_radians();
    let f_px = rig.focal_px();
    let horizon = (h as f64 / 2.0 - f_px * pitch.tan()).clamp(0.0, h as f64) as usize;

    for eye in 0..2 {
        let base = eye * 3 * h * w;
        for row in 0..h {
            let color = if row < horizon { SKY } else { GROUND };
            for ch in 0..3 {
                data[base + ch * h * w + row * w..base + ch * h * w + row * w + w]
                    .fill(color[ch]);
            }
        }
    }

    let (sin_h, cos_h) = state.heading.sin_cos();
    // Vehicle right-hand unit vector in this frame.
    let (rx, ry) = (-sin_h, cos_h);
    let cam_x = state.x + rig.forward_offset * cos_h;
    let cam_y = state.y + rig.forward_offset * sin_h;
    let (sin_p, cos_p) = pitch.sin_cos();

    // Project all cones once per eye, then paint far-to-near.
    for eye in 0..2 {
        let side = if eye == 0 { -1.0 } else { 1.0 };
        let ex = cam_x + side * rig.baseline / 2.0 * rx;
        let ey = cam_y + side * rig.baseline / 2.0 * ry;

        let mut discs: Vec<(f64, f64, f64, Shade)> = Vec::new();
        for cone in &track.cones {
            let dx = cone.x - ex;
            let dy = cone.y - ey;
            let dz = track.config.cone_visual_radius - rig.height;
            // Pre-pitch camera axes: X right, Y down, Z forward.
            let px = dx * rx + dy * ry;
            let py = -dz;
            let pz = dx * cos_h + dy * sin_h;
            // Pitch the camera down.
            let yc = cos_p * py - sin_p * pz;
            let zc = cos_p * pz + sin_p * py;
            if zc < 0.12 || zc > rig.max_range {
                continue;
            }
            let u = f_px * px / zc + w as f64 / 2.0;
            let v = f_px * yc / zc + h as f64 / 2.0;
            let r = f_px * track.config.cone_visual_radius / zc;
            if u + r < 0.0 || u - r > w as f64 || v + r < 0.0 || v - r > h as f64 {
                continue;
            }
            discs.push((zc, u, v, cone.shade));
        }
        discs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

        let base = eye * 3 * h * w;
        for (zc, u, v, shade) in discs {
            let r = f_px * track.config.cone_visual_radius / zc;
            let color = match shade {
                Shade::Light => CONE_LIGHT,
                Shade::Dark => CONE_DARK,
            };
            let r2 = r * r;
            let row_lo = ((v - r).floor().max(0.0)) as usize;
            let row_hi = ((v + r).ceil().min(h as f64 - 1.0)) as usize;
            let col_lo = ((u - r).floor().max(0.0)) as usize;
            let col_hi = ((u + r).ceil().min(w as f64 - 1.0)) as usize;
            for row in row_lo..=row_hi {
                let dy = row as f64 + 0.5 - v;
                for col in col_lo..=col_hi {
                    let dx = col as f64 + 0.5 - u;
                    if dx * dx + dy * dy <= r2 {
                        for ch in 0..3 {
                            data[base + ch * h * w + row * w + col] = color[ch];
                        }
                    }
                }
            }
        }
    }
    image
}

/// Screen-space center and radius of one cone in one eye, for tests.
pub fn project_cone(
    track: &Track,
    state: &VehicleState,
    rig: &CameraRig,
    cone_x: f64,
    cone_y: f64,
    eye_right: bool,
) -> Option<(f64, f64, f64)> {
    let (sin_h, cos_h) = state.heading.sin_cos();
    let (rx, ry) = (-sin_h, cos_h);
    let cam_x = state.x + rig.forward_offset * cos_h;
    let cam_y = state.y + rig.forward_offset * sin_h;
    let pitch = rig.pitch_deg.to_radians();
    let (sin_p, cos_p) = pitch.sin_cos();
    let side = if eye_right { 1.0 } else { -1.0 };
    let ex = cam_x + side * rig.baseline / 2.0 * rx;
    let ey = cam_y + side * rig.baseline / 2.0 * ry;
    let dx = cone_x - ex;
    let dy = cone_y - ey;
    let dz = track.config.cone_visual_radius - rig.height;
    let px = dx * rx + dy * ry;
    let py = -dz;
    let pz = dx * cos_h + dy * sin_h;
    let yc = cos_p * py - sin_p * pz;
    let zc = cos_p * pz + sin_p * py;
    if zc < 0.12 {
        return None;
    }
    let f_px = rig.focal_px();
    Some((
        f_px * px / zc + rig.image_width as f64 / 2.0,
        f_px * yc / zc + rig.image_height as f64 / 2.0,
        f_px * track.config.cone_visual_radius / zc,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::track::{build_track, Cone, TrackConfig};

    fn empty_track() -> Track {
        let mut t = build_track(&TrackConfig::default()).unwrap();
        t.cones.clear();
        t
    }

    #[test]
    fn no_cones_gives_the_fixed_background() {
        let t = empty_track();
        let rig = CameraRig::default().scaled(0.5);
        let st = VehicleState::on_centerline(&t, 0.0, true);
        let a = render_stereo(&t, &st, &rig);
        let b = render_stereo(&t, &st, &rig);
        assert_eq!(a.data(), b.data());
        // Only sky and ground values present.
        for px in a.data() {
            let is_bg = SKY.contains(px) || GROUND.contains(px);
            assert!(is_bg, "unexpected pixel {px}");
        }
    }

    #[test]
    fn dead_ahead_cone_shows_stereo_disparity() {
        let mut t = empty_track();
        let st = VehicleState::on_centerline(&t, 0.5, true);
        let depth = 2.0;
        let cone = Cone {
            x: st.x + depth * st.heading.cos(),
            y: st.y + depth * st.heading.sin(),
            shade: Shade::Light,
        };
        t.cones.push(cone);
        let rig = CameraRig::default();

        let (ul, vl, _) = project_cone(&t, &st, &rig, cone.x, cone.y, false).unwrap();
        let (ur, vr, _) = project_cone(&t, &st, &rig, cone.x, cone.y, true).unwrap();
        let cx = rig.image_width as f64 / 2.0;
        assert!((vl - vr).abs() < 1e-9, "same scanline in both eyes");
        assert!(ul > cx && ur < cx, "offset oppositely: left {ul}, right {ur}");
        let disparity = ul - ur;
        assert!(disparity > 0.0);

        // Disparity decreases with depth.
        let far = Cone {
            x: st.x + 2.0 * depth * st.heading.cos(),
            y: st.y + 2.0 * depth * st.heading.sin(),
            shade: Shade::Light,
        };
        let (ul2, _, _) = project_cone(&t, &st, &rig, far.x, far.y, false).unwrap();
        let (ur2, _, _) = project_cone(&t, &st, &rig, far.x, far.y, true).unwrap();
        assert!(ul2 - ur2 < disparity);
    }

    #[test]
    fn cone_disc_radius_follows_inverse_depth() {
        let t = empty_track();
        let st = VehicleState::on_centerline(&t, 0.5, true);
        let rig = CameraRig::default();
        // Distances measured from the camera, which sits ahead of the axle.
        let place = |d: f64| {
            (
                st.x + (rig.forward_offset + d) * st.heading.cos(),
                st.y + (rig.forward_offset + d) * st.heading.sin(),
            )
        };
        let (x1, y1) = place(1.5);
        let (x2, y2) = place(3.0);
        let (_, _, r_near) = project_cone(&t, &st, &rig, x1, y1, false).unwrap();
        let (_, _, r_far) = project_cone(&t, &st, &rig, x2, y2, false).unwrap();
        assert!(
            (r_near / r_far - 2.0).abs() < 0.1,
            "half the distance, twice the radius: {r_near} vs {r_far}"
        );
    }

    #[test]
    fn rendered_values_stay_in_unit_range() {
        let t = build_track(&TrackConfig::default()).unwrap();
        let rig = CameraRig::default().scaled(0.5);
        let st = VehicleState::on_centerline(&t, 3.0, true);
        let img = render_stereo(&t, &st, &rig);
        assert_eq!(img.shape(), &[6, rig.image_height, rig.image_width]);
        for &v in img.data() {
            assert!((0.0..=1.0).contains(&v));
        }
        // A populated track must actually paint some cones.
        let cone_px = img
            .data()
            .iter()
            .filter(|&&v| v == CONE_LIGHT[0] || v == CONE_DARK[0])
            .count();
        assert!(cone_px > 0, "no cones visible on the nominal track");
    }
}
