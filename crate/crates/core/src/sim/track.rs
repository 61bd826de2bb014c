//! Parametric five-zone cone track.
//!
//! The centerline is a closed loop of straights and circular arcs laid out
//! clockwise (positive steering convention = rightward turn = increasing
//! heading in this frame):
//!
//! straight (1) → swerve (2) → straight (1) → tight (3) → gradual (4) →
//! tight (3) → straight (1) → chicane (5) → closure at the start.
//!
//! Both 180° end caps are angle-symmetric, so their entry/exit points align
//! laterally and the gradual-turn radius can be solved in closed form from
//! the chicane cap's span, making the loop close exactly.

use crate::error::{Error, Result};
use crate::rng::{ContentHasher, SeedSplitter};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shade {
    Light,
    Dark,
}

#[derive(Clone, Copy, Debug)]
pub struct Cone {
    pub x: f64,
    pub y: f64,
    pub shade: Shade,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub lane_width: f64,
    pub cone_spacing: f64,
    /// Physical cone footprint radius used for strike inflation.
    pub cone_radius: f64,
    /// Visual cone radius used by the renderer.
    pub cone_visual_radius: f64,
    /// Uniform positional jitter applied to each cone (meters, 0 = off).
    pub cone_jitter: f64,
    pub seed: u64,
    pub straight_a: f64,
    pub straight_b: f64,
    pub swerve_radius: f64,
    pub swerve_angle_deg: f64,
    pub tight_radius: f64,
    pub tight_angle_deg: f64,
    pub gradual_angle_deg: f64,
    pub chicane_radius: f64,
    pub chicane_angle_outer_deg: f64,
    pub chicane_angle_inner_deg: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            lane_width: 0.6,
            cone_spacing: 0.35,
            cone_radius: 0.045,
            cone_visual_radius: 0.06,
            cone_jitter: 0.0,
            seed: 0,
            straight_a: 4.0,
            straight_b: 3.0,
            swerve_radius: 1.2,
            swerve_angle_deg: 40.0,
            tight_radius: 1.3,
            tight_angle_deg: 65.0,
            gradual_angle_deg: 50.0,
            chicane_radius: 1.15,
            chicane_angle_outer_deg: 110.0,
            chicane_angle_inner_deg: 40.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum SegKind {
    Straight,
    /// Signed curvature; positive curls the heading positively.
    Arc { kappa: f64 },
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    kind: SegKind,
    zone: u8,
    start_s: f64,
    length: f64,
    x0: f64,
    y0: f64,
    heading0: f64,
}

impl Segment {
    fn pose_at(&self, local_s: f64) -> (f64, f64, f64) {
        match self.kind {
            SegKind::Straight => (
                self.x0 + local_s * self.heading0.cos(),
                self.y0 + local_s * self.heading0.sin(),
                self.heading0,
            ),
            SegKind::Arc { kappa } => {
                let h = self.heading0 + kappa * local_s;
                let x = self.x0 + (h.sin() - self.heading0.sin()) / kappa;
                let y = self.y0 - (h.cos() - self.heading0.cos()) / kappa;
                (x, y, h)
            }
        }
    }
}

/// Zone interval `[start_s, end_s)` of one zone id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZoneInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub zone: u8,
}

#[derive(Clone, Debug)]
pub struct Track {
    segments: Vec<Segment>,
    intervals: Vec<ZoneInterval>,
    pub cones: Vec<Cone>,
    pub total_length: f64,
    pub lane_width: f64,
    pub config: TrackConfig,
    hash: u64,
}

/// Displacement of an arc of unit radius and signed `angle`, entering with
/// `heading`. Scaled by the radius to get the real displacement.
fn unit_arc_disp(heading: f64, angle: f64) -> (f64, f64) {
    let k = angle.signum();
    let h1 = heading + angle;
    ((h1.sin() - heading.sin()) / k, -(h1.cos() - heading.cos()) / k)
}

pub fn build_track(config: &TrackConfig) -> Result<Track> {
    for (name, v) in [
        ("lane_width", config.lane_width),
        ("cone_spacing", config.cone_spacing),
        ("straight_a", config.straight_a),
        ("straight_b", config.straight_b),
        ("swerve_radius", config.swerve_radius),
        ("tight_radius", config.tight_radius),
        ("chicane_radius", config.chicane_radius),
    ] {
        if v <= 0.0 {
            return Err(Error::Construction(format!("{name} must be positive, got {v}")));
        }
    }

    let rad = |deg: f64| deg.to_radians();
    let a2 = rad(config.swerve_angle_deg);
    let a3 = rad(config.tight_angle_deg);
    let a4 = rad(config.gradual_angle_deg);
    let c_out = rad(config.chicane_angle_outer_deg);
    let c_in = rad(config.chicane_angle_inner_deg);
    if (2.0 * a3 + a4 - std::f64::consts::PI).abs() > 1e-9 || a4 <= 0.0 || a3 <= 0.0 {
        return Err(Error::Construction(
            "tight/gradual cap angles must be positive and total 180°".into(),
        ));
    }
    if (2.0 * c_out - c_in - std::f64::consts::PI).abs() > 1e-9 {
        return Err(Error::Construction(
            "chicane angles must satisfy 2·outer − inner = 180°".into(),
        ));
    }

    // Chicane cap span (entry heading 0 in its local frame): arcs
    // +outer, −inner, +outer at the chicane radius.
    let r5 = config.chicane_radius;
    let (mut dx_b, mut d_b) = (0.0, 0.0);
    let mut h = 0.0;
    for angle in [c_out, -c_in, c_out] {
        let (dx, dy) = unit_arc_disp(h, angle);
        dx_b += r5 * dx;
        d_b += r5 * dy;
        h += angle;
    }
    if dx_b.abs() > 1e-9 {
        return Err(Error::Construction("chicane cap is not symmetric".into()));
    }

    // Solve the gradual radius so the tight/gradual/tight cap spans the
    // same lateral distance; displacements are linear in each radius.
    let r3 = config.tight_radius;
    let (_, t1y) = unit_arc_disp(0.0, a3);
    let (g_x, g_y) = unit_arc_disp(a3, a4);
    let (_, t2y) = unit_arc_disp(a3 + a4, a3);
    debug_assert!(g_x.abs() >= 0.0);
    let r4 = (d_b - r3 * (t1y + t2y)) / g_y;
    if r4 <= config.lane_width {
        return Err(Error::Construction(format!(
            "solved gradual-turn radius {r4:.3} m is infeasible; enlarge the chicane \
             or shrink the tight turns"
        )));
    }

    // Lay the segments clockwise from the origin.
    let r2 = config.swerve_radius;
    let plan: Vec<(u8, SegKind, f64)> = vec![
        (1, SegKind::Straight, config.straight_a),
        (2, SegKind::Arc { kappa: 1.0 / r2 }, r2 * a2),
        (2, SegKind::Arc { kappa: -1.0 / r2 }, r2 * a2),
        (2, SegKind::Arc { kappa: -1.0 / r2 }, r2 * a2),
        (2, SegKind::Arc { kappa: 1.0 / r2 }, r2 * a2),
        (1, SegKind::Straight, config.straight_b),
        (3, SegKind::Arc { kappa: 1.0 / r3 }, r3 * a3),
        (4, SegKind::Arc { kappa: 1.0 / r4 }, r4 * a4),
        (3, SegKind::Arc { kappa: 1.0 / r3 }, r3 * a3),
        (
            1,
            SegKind::Straight,
            config.straight_a + config.straight_b + 4.0 * r2 * a2.sin(),
        ),
        (5, SegKind::Arc { kappa: 1.0 / r5 }, r5 * c_out),
        (5, SegKind::Arc { kappa: -1.0 / r5 }, r5 * c_in),
        (5, SegKind::Arc { kappa: 1.0 / r5 }, r5 * c_out),
    ];

    let mut segments = Vec::with_capacity(plan.len());
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    let mut s = 0.0;
    for (zone, kind, length) in plan {
        if length <= 0.0 {
            return Err(Error::Construction("non-positive segment length".into()));
        }
        let seg = Segment {
            kind,
            zone,
            start_s: s,
            length,
            x0: x,
            y0: y,
            heading0: heading,
        };
        let (nx, ny, nh) = seg.pose_at(length);
        segments.push(seg);
        x = nx;
        y = ny;
        heading = nh;
        s += length;
    }
    let total_length = s;

    let closure = (x * x + y * y).sqrt();
    if closure > 1e-6 {
        return Err(Error::Construction(format!(
            "loop fails to close: end point {closure:.2e} m from start"
        )));
    }

    // Merge consecutive same-zone segments into zone intervals.
    let mut intervals: Vec<ZoneInterval> = Vec::new();
    for seg in &segments {
        match intervals.last_mut() {
            Some(last) if last.zone == seg.zone => last.end_s = seg.start_s + seg.length,
            _ => intervals.push(ZoneInterval {
                start_s: seg.start_s,
                end_s: seg.start_s + seg.length,
                zone: seg.zone,
            }),
        }
    }
    intervals.last_mut().unwrap().end_s = total_length;

    let mut track = Track {
        segments,
        intervals,
        cones: Vec::new(),
        total_length,
        lane_width: config.lane_width,
        config: *config,
        hash: 0,
    };
    track.place_cones()?;
    track.check_no_self_intersection()?;
    track.hash = track.compute_hash();
    Ok(track)
}

impl Track {
    fn place_cones(&mut self) -> Result<()> {
        let half = self.lane_width / 2.0;
        let splitter = SeedSplitter::new(self.config.seed);
        let mut rng = splitter.rng("track/cone-jitter", 0);
        let n = (self.total_length / self.config.cone_spacing).floor() as usize;
        let mut cones = Vec::with_capacity(2 * n);
        for i in 0..n {
            let s = i as f64 * self.config.cone_spacing;
            let (x, y, heading) = self.pose_at(s);
            // Unit normal toward the vehicle's right-hand side.
            let (nx, ny) = (-heading.sin(), heading.cos());
            for (side, shade) in [(-1.0, Shade::Light), (1.0, Shade::Dark)] {
                let (jx, jy) = if self.config.cone_jitter > 0.0 {
                    (
                        (rng.gen::<f64>() * 2.0 - 1.0) * self.config.cone_jitter,
                        (rng.gen::<f64>() * 2.0 - 1.0) * self.config.cone_jitter,
                    )
                } else {
                    (0.0, 0.0)
                };
                cones.push(Cone {
                    x: x + side * half * nx + jx,
                    y: y + side * half * ny + jy,
                    shade,
                });
            }
        }
        self.cones = cones;
        Ok(())
    }

    /// Reject configs whose inner cone row folds over (lane wider than a
    /// turn diameter) by checking sampled lane-edge polylines for
    /// self-intersection.
    fn check_no_self_intersection(&self) -> Result<()> {
        let half = self.lane_width / 2.0;
        for side in [-1.0, 1.0] {
            let step = 0.15;
            let n = (self.total_length / step).ceil() as usize;
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let s = i as f64 * step;
                    let (x, y, h) = self.pose_at(s);
                    (x - side * half * h.sin(), y + side * half * h.cos())
                })
                .collect();
            for i in 0..n {
                let a1 = pts[i];
                let a2 = pts[(i + 1) % n];
                for j in i + 2..n {
                    // Skip adjacent segments (shared endpoint).
                    if i == 0 && j == n - 1 {
                        continue;
                    }
                    let b1 = pts[j];
                    let b2 = pts[(j + 1) % n];
                    if segments_intersect(a1, a2, b1, b2) {
                        return Err(Error::Construction(format!(
                            "lane edge self-intersects near s = {:.2} m; the lane is too \
                             wide for the turn radii",
                            i as f64 * step
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn compute_hash(&self) -> u64 {
        let mut h = ContentHasher::new();
        h.update_f64(self.total_length);
        h.update_f64(self.lane_width);
        h.update_u64(self.segments.len() as u64);
        for seg in &self.segments {
            h.update_u64(seg.zone as u64);
            h.update_f64(seg.length);
            match seg.kind {
                SegKind::Straight => h.update_f64(0.0),
                SegKind::Arc { kappa } => h.update_f64(kappa),
            }
        }
        h.update_u64(self.cones.len() as u64);
        for c in &self.cones {
            h.update_f64(c.x);
            h.update_f64(c.y);
            h.update_u64(matches!(c.shade, Shade::Dark) as u64);
        }
        h.finish()
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn wrap_s(&self, s: f64) -> f64 {
        s.rem_euclid(self.total_length)
    }

    /// Centerline pose (x, y, heading) at arc length `s` (wrapped).
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let s = self.wrap_s(s);
        let idx = match self
            .segments
            .binary_search_by(|seg| seg.start_s.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let seg = &self.segments[idx];
        seg.pose_at(s - seg.start_s)
    }

    /// Zone at arc length `s`; out-of-range values wrap modulo the loop.
    /// Intervals are half-open, so a boundary point belongs to the interval
    /// that starts there.
    pub fn zone_of(&self, s: f64) -> u8 {
        let s = self.wrap_s(s);
        let idx = match self
            .intervals
            .binary_search_by(|iv| iv.start_s.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.intervals[idx].zone
    }

    pub fn zone_intervals(&self) -> &[ZoneInterval] {
        &self.intervals
    }

    /// Arc length of the centerline point nearest to `(x, y)`, searched
    /// around `hint_s` (the previous known position).
    pub fn project(&self, x: f64, y: f64, hint_s: f64) -> f64 {
        let coarse = 0.05;
        let span = 1.6;
        let mut best_s = self.wrap_s(hint_s);
        let mut best_d = f64::INFINITY;
        let steps = (2.0 * span / coarse) as usize;
        for i in 0..=steps {
            let s = self.wrap_s(hint_s - span + i as f64 * coarse);
            let (px, py, _) = self.pose_at(s);
            let d = (px - x).powi(2) + (py - y).powi(2);
            if d < best_d {
                best_d = d;
                best_s = s;
            }
        }
        // Fine pass around the coarse winner.
        let fine = 0.005;
        let mut refined = best_s;
        for i in 0..=20 {
            let s = self.wrap_s(best_s - coarse + i as f64 * (2.0 * coarse / 20.0).max(fine));
            let (px, py, _) = self.pose_at(s);
            let d = (px - x).powi(2) + (py - y).powi(2);
            if d < best_d {
                best_d = d;
                refined = s;
            }
        }
        refined
    }

    /// Signed lateral offset of a point from the centerline at `s`
    /// (positive toward the vehicle's right-hand cone row).
    pub fn lateral_offset(&self, x: f64, y: f64, s: f64) -> f64 {
        let (px, py, h) = self.pose_at(s);
        let (nx, ny) = (-h.sin(), h.cos());
        (x - px) * nx + (y - py) * ny
    }

    /// CSV of centerline samples and cone positions for plotting.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("kind,s,x,y,shade\n");
        let step = 0.1;
        let n = (self.total_length / step).ceil() as usize;
        for i in 0..n {
            let s = i as f64 * step;
            let (x, y, _) = self.pose_at(s);
            let _ = writeln!(out, "centerline,{s:.3},{x:.6},{y:.6},");
        }
        for c in &self.cones {
            let shade = match c.shade {
                Shade::Light => "light",
                Shade::Dark => "dark",
            };
            let _ = writeln!(out, "cone,,{:.6},{:.6},{shade}", c.x, c.y);
        }
        out
    }

    /// Minimal SVG plot of the loop and cones.
    pub fn export_svg(&self) -> String {
        let (mut min_x, mut min_y, mut max_x, mut max_y) =
            (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        let step = 0.1;
        let n = (self.total_length / step).ceil() as usize;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let (x, y, _) = self.pose_at(i as f64 * step);
                (x, y)
            })
            .collect();
        for &(x, y) in &pts {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        let pad = 1.0;
        let scale = 60.0;
        let w = ((max_x - min_x) + 2.0 * pad) * scale;
        let h = ((max_y - min_y) + 2.0 * pad) * scale;
        let tx = |x: f64| (x - min_x + pad) * scale;
        let ty = |y: f64| (y - min_y + pad) * scale;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" \
             viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", tx(x), ty(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>",
            path.join(" ")
        );
        for c in &self.cones {
            let color = match c.shade {
                Shade::Light => "#f90",
                Shade::Dark => "#c40",
            };
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{color}\"/>",
                tx(c.x),
                ty(c.y)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64), p4: (f64, f64)) -> bool {
    let d = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    let d1 = d(p3, p4, p1);
    let d2 = d(p3, p4, p2);
    let d3 = d(p1, p2, p3);
    let d4 = d(p1, p2, p4);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_track_closes() {
        let t = build_track(&TrackConfig::default()).unwrap();
        let (x0, y0, _) = t.pose_at(0.0);
        let (x1, y1, _) = t.pose_at(t.total_length - 1e-9);
        let gap = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        assert!(gap < 1e-6, "loop gap {gap}");
    }

    #[test]
    fn all_zones_present_and_straights_plural() {
        let t = build_track(&TrackConfig::default()).unwrap();
        let mut counts = [0usize; 6];
        for iv in t.zone_intervals() {
            counts[iv.zone as usize] += 1;
        }
        for z in 1..=5 {
            assert!(counts[z] >= 1, "zone {z} missing");
        }
        assert!(counts[1] >= 2, "straightaway sections are plural");
    }

    #[test]
    fn tight_turns_flank_the_gradual_turn() {
        let t = build_track(&TrackConfig::default()).unwrap();
        let ivs = t.zone_intervals();
        let z4_pos = ivs.iter().position(|iv| iv.zone == 4).unwrap();
        assert_eq!(ivs[z4_pos - 1].zone, 3);
        assert_eq!(ivs[z4_pos + 1].zone, 3);
    }

    #[test]
    fn intervals_partition_the_loop_exactly() {
        let t = build_track(&TrackConfig::default()).unwrap();
        let ivs = t.zone_intervals();
        assert_eq!(ivs[0].start_s, 0.0);
        for w in ivs.windows(2) {
            assert_eq!(w[0].end_s, w[1].start_s, "gap or overlap between intervals");
        }
        assert_eq!(ivs.last().unwrap().end_s, t.total_length);
        let sum: f64 = ivs.iter().map(|iv| iv.end_s - iv.start_s).sum();
        assert!((sum - t.total_length).abs() < 1e-9);
    }

    #[test]
    fn zone_of_matches_interval_table_when_scanned() {
        let t = build_track(&TrackConfig::default()).unwrap();
        let mut s = 0.0;
        while s < t.total_length {
            let z = t.zone_of(s);
            let iv = t
                .zone_intervals()
                .iter()
                .find(|iv| iv.start_s <= s && s < iv.end_s)
                .unwrap();
            assert_eq!(z, iv.zone, "zone mismatch at s={s}");
            s += 0.1;
        }
        // Boundary tie-break: half-open intervals.
        for iv in t.zone_intervals() {
            assert_eq!(t.zone_of(iv.start_s), iv.zone);
        }
        // Out of range wraps.
        assert_eq!(t.zone_of(t.total_length), t.zone_of(0.0));
        assert_eq!(t.zone_of(-0.05), t.zone_of(t.total_length - 0.05));
    }

    #[test]
    fn cone_count_matches_spacing_arithmetic() {
        let t = build_track(&TrackConfig::default()).unwrap();
        let expected = 2 * (t.total_length / t.config.cone_spacing).floor() as usize;
        let diff = t.cones.len() as i64 - expected as i64;
        assert!(diff.abs() <= 2, "cones {} vs expected {expected}", t.cones.len());
    }

    #[test]
    fn cones_sit_at_half_lane_offset() {
        let t = build_track(&TrackConfig::default()).unwrap();
        for c in t.cones.iter().step_by(7) {
            let s = t.project(c.x, c.y, 0.0);
            // Global projection: search the whole loop.
            let mut best = (f64::INFINITY, 0.0);
            let mut probe = 0.0;
            while probe < t.total_length {
                let (px, py, _) = t.pose_at(probe);
                let d = (px - c.x).powi(2) + (py - c.y).powi(2);
                if d < best.0 {
                    best = (d, probe);
                }
                probe += 0.02;
            }
            let _ = s;
            let off = t.lateral_offset(c.x, c.y, best.1).abs();
            assert!(
                (off - t.lane_width / 2.0).abs() < 0.02,
                "cone offset {off} != half lane"
            );
        }
    }

    #[test]
    fn infeasible_lane_width_is_a_construction_error() {
        let cfg = TrackConfig {
            lane_width: 4.0,
            ..TrackConfig::default()
        };
        match build_track(&cfg) {
            Err(Error::Construction(_)) => {}
            other => panic!("expected construction error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn seeded_builds_are_identical() {
        let cfg = TrackConfig {
            cone_jitter: 0.01,
            seed: 42,
            ..TrackConfig::default()
        };
        let a = build_track(&cfg).unwrap();
        let b = build_track(&cfg).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.export_csv(), b.export_csv());

        let c = build_track(&TrackConfig {
            seed: 43,
            ..cfg
        })
        .unwrap();
        assert_ne!(a.hash(), c.hash(), "jittered cones must depend on the seed");
    }
}
