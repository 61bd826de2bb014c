//! The hierarchical inference pathway: the master classifier picks a zone
//! for each incoming frame and dispatches the buffered frame window to that
//! zone's regression network; plus closed-loop autonomous driving, open-loop
//! lap prediction, baseline comparison and lap-trace alignment.

use crate::datalog::{Direction, LapLog};
use crate::error::{Error, Result};
use crate::models::{
    compile, forward, frame_projections, reduce_windows, CompiledModel, ModelSpec, ModelWeights,
    ZONE_COUNT,
};
use crate::sim::{
    detect_cone_strike, oracle_steering, render_stereo, step_vehicle, wrap_delta, SimConfig,
    Track, VehicleState,
};
use crate::tensor::Tensor;
use crate::trainer::argmax_lowest_tie;
use std::collections::VecDeque;

/// Fixed-scalar lap-distance stretches used to overlay autonomous laps on
/// reference laps (frame-rate drift compensation).
pub const STRETCH_CW: f64 = 1.02;
pub const STRETCH_CCW: f64 = 1.03;

struct LoadedModel {
    cm: CompiledModel,
    params: Vec<Tensor<f32>>,
}

impl LoadedModel {
    fn new(spec: &ModelSpec, weights: &ModelWeights) -> Result<Self> {
        let cm = compile(spec)?;
        if weights.spec_hash != cm.spec_hash {
            return Err(Error::IncompatibleCheckpoint(format!(
                "weights hash does not match spec '{}'",
                spec.name
            )));
        }
        Ok(LoadedModel {
            cm,
            params: weights.as_params(),
        })
    }
}

/// Ring-buffer entry: the frame plus lazily computed per-zone recurrent
/// input projections. A projection is cached only once its zone's network
/// is actually selected, so each arriving frame is processed by exactly one
/// regression network per step.
struct BufferEntry {
    frame: Tensor<f32>,
    projections: [Option<Vec<Vec<f32>>>; ZONE_COUNT],
}

pub struct RouterStep {
    pub steering: f32,
    pub zone: u8,
    pub throttle: f64,
}

/// Inference state of the two-level dispatcher.
pub struct Router {
    mcn: LoadedModel,
    srns: Vec<LoadedModel>,
    buffer: VecDeque<BufferEntry>,
    capacity: usize,
    throttle: crate::sim::ThrottleMap,
    /// Emit a new steering value every n-th step, holding it in between
    /// (models the slower steering update cycle; 1 = off).
    pub steering_decimation: usize,
    step_count: u64,
    held_steering: f32,
    pub last_zone: Option<u8>,
    srn_inferences: u64,
}

impl Router {
    pub fn new(
        mcn_spec: &ModelSpec,
        mcn_weights: &ModelWeights,
        srn_specs: &[ModelSpec],
        srn_weights: &[ModelWeights],
        throttle: crate::sim::ThrottleMap,
    ) -> Result<Self> {
        if srn_specs.len() != ZONE_COUNT || srn_weights.len() != ZONE_COUNT {
            return Err(Error::State(format!(
                "router needs {ZONE_COUNT} regression networks"
            )));
        }
        let mcn = LoadedModel::new(mcn_spec, mcn_weights)?;
        let srns: Vec<LoadedModel> = srn_specs
            .iter()
            .zip(srn_weights)
            .map(|(s, w)| LoadedModel::new(s, w))
            .collect::<Result<_>>()?;
        let capacity = srns.iter().map(|m| m.cm.seq_len).max().unwrap_or(0).max(1);
        Ok(Router {
            mcn,
            srns,
            buffer: VecDeque::with_capacity(capacity),
            capacity,
            throttle,
            steering_decimation: 1,
            step_count: 0,
            held_steering: 0.0,
            last_zone: None,
            srn_inferences: 0,
        })
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.last_zone = None;
        self.step_count = 0;
        self.held_steering = 0.0;
    }

    /// Total regression-network inferences; equals the number of steps by
    /// the one-SRN-per-frame dispatch contract.
    pub fn srn_inference_count(&self) -> u64 {
        self.srn_inferences
    }

    /// Classify, dispatch, regress. The returned steering is clamped to
    /// [−100, 100] no matter what the network emits.
    pub fn step(&mut self, frame: Tensor<f32>) -> Result<RouterStep> {
        if frame.shape() != self.mcn.cm.input_shape {
            return Err(Error::dimension(format!(
                "frame shape {:?} does not match configured input {:?}",
                frame.shape(),
                self.mcn.cm.input_shape
            )));
        }
        let logits = forward(&self.mcn.cm, &self.mcn.params, std::slice::from_ref(&frame))?;
        let zone_idx = argmax_lowest_tie(logits.data());
        let zone = (zone_idx + 1) as u8;

        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(BufferEntry {
            frame,
            projections: Default::default(),
        });

        let srn = &self.srns[zone_idx];
        let raw = if srn.cm.paths.is_empty() {
            let entry = self.buffer.back().unwrap();
            forward(&srn.cm, &srn.params, std::slice::from_ref(&entry.frame))?.item()?
        } else {
            let need = srn.cm.seq_len;
            let have = self.buffer.len().min(need);
            let start = self.buffer.len() - have;
            // Fill this zone's projection cache for the window.
            for entry in self.buffer.iter_mut().skip(start) {
                if entry.projections[zone_idx].is_none() {
                    entry.projections[zone_idx] =
                        Some(frame_projections(&srn.cm, &srn.params, &entry.frame));
                }
            }
            let n_paths = srn.cm.paths.len();
            let mut per_path: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(need); n_paths];
            // Left-pad short history by repeating the earliest frame.
            let first = self.buffer[start].projections[zone_idx].as_ref().unwrap();
            for _ in 0..need - have {
                for (p, u) in first.iter().enumerate() {
                    per_path[p].push(u.clone());
                }
            }
            for entry in self.buffer.iter().skip(start) {
                let projs = entry.projections[zone_idx].as_ref().unwrap();
                for (p, u) in projs.iter().enumerate() {
                    per_path[p].push(u.clone());
                }
            }
            let windows: Vec<&[Vec<f32>]> = per_path.iter().map(|v| v.as_slice()).collect();
            reduce_windows(&srn.cm, &srn.params, &windows)?.item()?
        };
        self.srn_inferences += 1;

        let clamped = raw.clamp(-100.0, 100.0);
        let steering = if self.steering_decimation <= 1
            || self.step_count % self.steering_decimation as u64 == 0
        {
            clamped
        } else {
            self.held_steering
        };
        self.held_steering = steering;
        self.step_count += 1;
        self.last_zone = Some(zone);
        Ok(RouterStep {
            steering,
            zone,
            throttle: self.throttle.for_zone(zone),
        })
    }
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct TracePoint {
    /// Normalized lap distance in [0, 1], nondecreasing.
    pub distance: f64,
    pub steering: f32,
    /// Logged demonstrator steering (open-loop traces only).
    pub steering_truth: Option<f32>,
    pub zone: u8,
    pub zone_truth: Option<u8>,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug)]
pub struct LapTrace {
    pub direction: Direction,
    pub points: Vec<TracePoint>,
}

impl LapTrace {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("distance,steering_pred,steering_truth,zone_pred,zone_truth,x,y\n");
        for p in &self.points {
            let truth = p
                .steering_truth
                .map(|v| format!("{v:.4}"))
                .unwrap_or_default();
            let zt = p.zone_truth.map(|z| z.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{:.6},{:.4},{},{},{},{:.5},{:.5}\n",
                p.distance, p.steering, truth, p.zone, zt, p.x, p.y
            ));
        }
        out
    }

    /// Mean squared steering error against the logged ground truth.
    pub fn mse(&self) -> Option<f64> {
        let diffs: Vec<f64> = self
            .points
            .iter()
            .filter_map(|p| {
                p.steering_truth
                    .map(|t| ((p.steering - t) as f64).powi(2))
            })
            .collect();
        if diffs.is_empty() {
            None
        } else {
            Some(diffs.iter().sum::<f64>() / diffs.len() as f64)
        }
    }

    /// Per-zone (sum of squared errors, count) keyed by true zone.
    pub fn per_zone_sse(&self) -> [(f64, usize); ZONE_COUNT] {
        let mut acc = [(0.0, 0usize); ZONE_COUNT];
        for p in &self.points {
            if let (Some(t), Some(z)) = (p.steering_truth, p.zone_truth) {
                if (1..=5).contains(&z) {
                    let e = ((p.steering - t) as f64).powi(2);
                    acc[(z - 1) as usize].0 += e;
                    acc[(z - 1) as usize].1 += 1;
                }
            }
        }
        acc
    }
}

/// Stretch the distance axis by a fixed scalar (clamped back into [0, 1])
/// for one-to-one lap comparisons.
pub fn align_lap(trace: &LapTrace, stretch: f64) -> Result<LapTrace> {
    if stretch <= 0.0 {
        return Err(Error::parameter("stretch must be positive"));
    }
    let mut out = trace.clone();
    for p in &mut out.points {
        p.distance = (p.distance * stretch).min(1.0);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Open-loop prediction
// ---------------------------------------------------------------------------

/// Run the router over a logged lap's frames in order, comparing predicted
/// steering and zone selections against the log.
pub fn predict_lap(router: &mut Router, lap: &LapLog) -> Result<LapTrace> {
    router.reset();
    let n = lap.frames.len();
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let frame = lap.image_f32(i);
        let step = router.step(frame)?;
        let f = &lap.frames[i];
        points.push(TracePoint {
            distance: (i + 1) as f64 / n as f64,
            steering: step.steering,
            steering_truth: Some(f.steering),
            zone: step.zone,
            zone_truth: Some(f.zone),
            x: 0.0,
            y: 0.0,
        });
    }
    Ok(LapTrace {
        direction: lap.header.direction,
        points,
    })
}

/// Open-loop trace of a single feed-forward model (the baseline) over a lap.
pub fn predict_lap_single(
    spec: &ModelSpec,
    weights: &ModelWeights,
    lap: &LapLog,
) -> Result<LapTrace> {
    let model = LoadedModel::new(spec, weights)?;
    let n = lap.frames.len();
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let frame = lap.image_f32(i);
        let raw = forward(&model.cm, &model.params, &[frame])?.item()?;
        let f = &lap.frames[i];
        points.push(TracePoint {
            distance: (i + 1) as f64 / n as f64,
            steering: raw.clamp(-100.0, 100.0),
            steering_truth: Some(f.steering),
            zone: f.zone,
            zone_truth: Some(f.zone),
            x: 0.0,
            y: 0.0,
        });
    }
    Ok(LapTrace {
        direction: lap.header.direction,
        points,
    })
}

// ---------------------------------------------------------------------------
// Closed-loop driving
// ---------------------------------------------------------------------------

pub enum Controller<'a> {
    Router(&'a mut Router),
    /// Pure-pursuit reference controller (harness-validity check).
    Oracle,
}

pub struct DriveOutcome {
    pub success: bool,
    pub traces: Vec<LapTrace>,
    pub strike_count: usize,
    /// Pose of the first strike, if any.
    pub first_strike: Option<(f64, f64, f64)>,
    pub aborted: Option<String>,
}

/// Drive `laps` consecutive laps closed-loop. Success means every lap
/// completed with zero cone strikes and no corridor abort.
pub fn drive_autonomous(
    track: &Track,
    sim: &SimConfig,
    controller: &mut Controller<'_>,
    direction: Direction,
    laps: usize,
    dt: f64,
) -> Result<DriveOutcome> {
    if let Controller::Router(r) = controller {
        r.reset();
    }
    let sign = direction.sign();
    let mut state = VehicleState::on_centerline(track, 0.0, direction == Direction::Cw);
    let mut traces = Vec::with_capacity(laps);
    let mut points: Vec<TracePoint> = Vec::new();
    let mut progress = 0.0;
    let mut prev_s = state.s;
    let mut strikes = 0usize;
    let mut first_strike = None;
    let mut striking = false;
    let mut aborted = None;
    let total = laps as f64 * track.total_length;
    let max_steps = (3.0 * total / (0.2 * sim.vehicle.v_max * dt)) as usize;

    for _step in 0..max_steps {
        let (steering, throttle, zone) = match controller {
            Controller::Router(router) => {
                let frame = render_stereo(track, &state, &sim.rig);
                let out = router.step(frame)?;
                (out.steering as f64, out.throttle, out.zone)
            }
            Controller::Oracle => {
                let zone = track.zone_of(state.s);
                let cmd = oracle_steering(
                    track,
                    &state,
                    sim.oracle.lookahead,
                    sign,
                    None,
                    &sim.vehicle,
                );
                (cmd, sim.throttle.for_zone(zone), zone)
            }
        };

        let lap_progress = (progress / track.total_length).fract();
        points.push(TracePoint {
            distance: if progress >= total - 1e-9 { 1.0 } else { lap_progress },
            steering: steering as f32,
            steering_truth: None,
            zone,
            zone_truth: Some(track.zone_of(state.s)),
            x: state.x,
            y: state.y,
        });

        state = step_vehicle(track, &state, steering, throttle, dt, &sim.vehicle);
        progress += sign * wrap_delta(track, state.s, prev_s);
        prev_s = state.s;

        // Count distinct contact events, not contact frames.
        let contact = detect_cone_strike(track, &state, &sim.vehicle);
        if contact && !striking {
            strikes += 1;
            if first_strike.is_none() {
                first_strike = Some((state.x, state.y, state.heading));
            }
        }
        striking = contact;

        let lateral = track.lateral_offset(state.x, state.y, state.s).abs();
        if lateral > 2.0 * track.lane_width {
            aborted = Some(format!(
                "vehicle left the corridor at s = {:.2} m (lateral {:.2} m)",
                state.s, lateral
            ));
            break;
        }

        let laps_done = (progress / track.total_length).floor() as usize;
        if laps_done > traces.len() {
            traces.push(LapTrace {
                direction,
                points: std::mem::take(&mut points),
            });
        }
        if traces.len() >= laps {
            break;
        }
    }
    if !points.is_empty() {
        traces.push(LapTrace {
            direction,
            points,
        });
    }
    let completed = traces.iter().filter(|t| t.points.len() > 10).count() >= laps
        && aborted.is_none();

    Ok(DriveOutcome {
        success: completed && strikes == 0,
        traces,
        strike_count: strikes,
        first_strike,
        aborted,
    })
}

// ---------------------------------------------------------------------------
// Baseline comparison
// ---------------------------------------------------------------------------

pub struct ZoneMse {
    pub hier: Option<f64>,
    pub base: Option<f64>,
    pub frames: usize,
}

pub struct CompareReport {
    pub mse_hier: f64,
    pub mse_base: f64,
    pub per_zone: [ZoneMse; ZONE_COUNT],
}

/// Side-by-side open-loop MSE of the hierarchical system and the baseline
/// over identical test laps.
pub fn compare_baseline(hier: &[LapTrace], base: &[LapTrace]) -> Result<CompareReport> {
    if hier.len() != base.len() {
        return Err(Error::data(format!(
            "trace count mismatch: {} hierarchical vs {} baseline",
            hier.len(),
            base.len()
        )));
    }
    for (h, b) in hier.iter().zip(base) {
        if h.points.len() != b.points.len() {
            return Err(Error::data(format!(
                "trace length mismatch: {} vs {}",
                h.points.len(),
                b.points.len()
            )));
        }
    }
    let overall = |traces: &[LapTrace]| -> f64 {
        let mut sse = 0.0;
        let mut n = 0usize;
        for t in traces {
            for (s, c) in t.per_zone_sse() {
                sse += s;
                n += c;
            }
        }
        sse / n.max(1) as f64
    };
    let mut per_zone = [(); ZONE_COUNT].map(|_| ZoneMse {
        hier: None,
        base: None,
        frames: 0,
    });
    for z in 0..ZONE_COUNT {
        let (mut hs, mut hn, mut bs) = (0.0, 0usize, 0.0);
        for t in hier {
            let (s, c) = t.per_zone_sse()[z];
            hs += s;
            hn += c;
        }
        for t in base {
            let (s, _) = t.per_zone_sse()[z];
            bs += s;
        }
        per_zone[z] = ZoneMse {
            hier: (hn > 0).then(|| hs / hn as f64),
            base: (hn > 0).then(|| bs / hn as f64),
            frames: hn,
        };
    }
    Ok(CompareReport {
        mse_hier: overall(hier),
        mse_base: overall(base),
        per_zone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_trace(n: usize, pred: impl Fn(usize) -> f32, truth: impl Fn(usize) -> f32) -> LapTrace {
        LapTrace {
            direction: Direction::Cw,
            points: (0..n)
                .map(|i| TracePoint {
                    distance: (i + 1) as f64 / n as f64,
                    steering: pred(i),
                    steering_truth: Some(truth(i)),
                    zone: 1 + (i % 5) as u8,
                    zone_truth: Some(1 + (i % 5) as u8),
                    x: 0.0,
                    y: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn align_identity_and_presets() {
        let t = toy_trace(50, |i| i as f32, |i| i as f32);
        let same = align_lap(&t, 1.0).unwrap();
        for (a, b) in t.points.iter().zip(&same.points) {
            assert_eq!(a.distance, b.distance);
        }
        for stretch in [STRETCH_CW, STRETCH_CCW] {
            let s = align_lap(&t, stretch).unwrap();
            let mut prev = 0.0;
            for p in &s.points {
                assert!((0.0..=1.0).contains(&p.distance));
                assert!(p.distance >= prev, "stretched distances must stay monotone");
                prev = p.distance;
            }
        }
        assert!(align_lap(&t, 0.0).is_err());
    }

    #[test]
    fn identical_predictions_give_equal_mse() {
        let a = toy_trace(40, |i| (i as f32).sin() * 30.0, |i| (i as f32).cos() * 30.0);
        let b = a.clone();
        let report = compare_baseline(&[a], &[b]).unwrap();
        assert_eq!(report.mse_hier, report.mse_base);
    }

    #[test]
    fn per_zone_mse_aggregates_to_overall() {
        let t = toy_trace(100, |i| i as f32 * 0.3, |i| i as f32 * 0.31 - 2.0);
        let report = compare_baseline(&[t.clone()], &[t.clone()]).unwrap();
        let mut sse = 0.0;
        let mut n = 0usize;
        for z in &report.per_zone {
            if let Some(m) = z.hier {
                sse += m * z.frames as f64;
                n += z.frames;
            }
        }
        let aggregated = sse / n as f64;
        assert!(
            (aggregated - report.mse_hier).abs() < 1e-9,
            "frame-weighted per-zone MSEs must reproduce the overall MSE"
        );
    }

    #[test]
    fn mismatched_traces_are_a_data_error() {
        let a = toy_trace(40, |_| 0.0, |_| 0.0);
        let b = toy_trace(39, |_| 0.0, |_| 0.0);
        assert!(matches!(
            compare_baseline(&[a], &[b]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn trace_csv_has_the_contract_columns() {
        let t = toy_trace(3, |_| 1.0, |_| 2.0);
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "distance,steering_pred,steering_truth,zone_pred,zone_truth,x,y"
        );
        assert_eq!(lines.count(), 3);
    }
}
