//! Supervised training of the classifier and the regression networks per
//! the training schedule, with sequence batching for recurrent models,
//! loss-curve emission and best-checkpoint selection.
//!
//! Gradient batches are computed per-sample (optionally in parallel) and
//! reduced in sample order, so a run is bit-reproducible regardless of
//! threading; `deterministic` additionally forces single-threaded batches.

use crate::autodiff::ComputeGraph;
use crate::datalog::{DatasetSplit, LapLog, ZoneSegment};
use crate::error::{Error, Result};
use crate::kernels;
use crate::models::{
    compile, forward, frame_projections, init_weights, reduce_windows, tape_forward_with,
    CompiledModel, ModelKind, ModelSpec, ModelWeights,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::SeedSplitter;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frames per batch for feed-forward models, windows for recurrent.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Window stride over zone segments for recurrent models.
    pub sequence_stride: usize,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            sequence_stride: 4,
            deterministic: false,
        }
    }
}

/// Per-epoch (train loss, test loss).
#[derive(Clone, Debug, Default)]
pub struct LossCurve {
    pub entries: Vec<(f64, f64)>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss\n");
        for (i, (train, test)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{},{:.9e},{:.9e}\n", i + 1, train, test));
        }
        out
    }
}

/// One training sample: `len` real frames starting at `start` in `lap`,
/// left-padded with `pad` repetitions of the first frame, regressing the
/// steering of the final real frame (or classifying its zone).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub lap: usize,
    pub start: usize,
    pub len: usize,
    pub pad: usize,
}

impl Window {
    pub fn last_frame(&self) -> usize {
        self.start + self.len - 1
    }
}

/// Sliding windows over contiguous zone segments. Windows never cross a
/// segment boundary; segments shorter than `seq_len` yield one left-padded
/// window.
pub fn make_sequences(segments: &[ZoneSegment], seq_len: usize, stride: usize) -> Vec<Window> {
    assert!(seq_len >= 1 && stride >= 1);
    let mut windows = Vec::new();
    for seg in segments {
        if seg.len < seq_len {
            windows.push(Window {
                lap: seg.lap,
                start: seg.start,
                len: seg.len,
                pad: seq_len - seg.len,
            });
            continue;
        }
        let mut offset = 0;
        while offset + seq_len <= seg.len {
            windows.push(Window {
                lap: seg.lap,
                start: seg.start + offset,
                len: seq_len,
                pad: 0,
            });
            offset += stride;
        }
    }
    windows
}

fn window_frames(laps: &[&LapLog], w: &Window) -> Vec<Tensor<f32>> {
    let lap = laps[w.lap];
    let mut frames = Vec::with_capacity(w.len + w.pad);
    for _ in 0..w.pad {
        frames.push(lap.image_f32(w.start));
    }
    for i in 0..w.len {
        frames.push(lap.image_f32(w.start + i));
    }
    frames
}

enum Target {
    Class(usize),
    Steering(f32),
}

/// Gradient work unit: several samples share one graph (and one copy of the
/// parameter leaves), and a single backward accumulates their gradient sum.
fn chunk_loss_and_grads(
    cm: &CompiledModel,
    params: &[Tensor<f32>],
    laps: &[&LapLog],
    samples: &[(Window, Target)],
    chunk: &[usize],
) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut g = ComputeGraph::<f32>::new();
    let param_nodes: Vec<_> = params.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let mut loss_value_sum = 0.0f64;
    let mut total: Option<crate::autodiff::NodeId> = None;
    for &idx in chunk {
        let (w, t) = &samples[idx];
        let frames = window_frames(laps, w);
        let out = tape_forward_with(&mut g, cm, &param_nodes, &frames)?;
        let loss = match t {
            Target::Class(label) => {
                let probs = g.softmax(out)?;
                g.cross_entropy(probs, *label)?
            }
            Target::Steering(y) => {
                let target = g.leaf(Tensor::vector(vec![*y]), false);
                g.half_l2(out, target)?
            }
        };
        loss_value_sum += g.value(loss).item()? as f64;
        total = Some(match total {
            None => loss,
            Some(prev) => g.add(prev, loss)?,
        });
    }
    g.backward(total.expect("nonempty chunk"))?;
    let grads = param_nodes
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();
    Ok((loss_value_sum, grads))
}

struct EpochStats {
    mean_loss: f64,
}

/// Fixed chunk count per batch: keeps the floating-point reduction order —
/// and therefore the trained weights — identical between the single-threaded
/// and parallel paths.
const CHUNKS_PER_BATCH: usize = 4;

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    cm: &CompiledModel,
    params: &mut [Tensor<f32>],
    optimizer: &mut Optimizer<f32>,
    laps: &[&LapLog],
    samples: &[(Window, Target)],
    order: &[usize],
    batch_size: usize,
    parallel: bool,
) -> Result<EpochStats> {
    let mut loss_acc = 0.0;
    for batch in order.chunks(batch_size) {
        let chunk_len = batch.len().div_ceil(CHUNKS_PER_BATCH);
        let chunks: Vec<&[usize]> = batch.chunks(chunk_len).collect();
        let work =
            |chunk: &&[usize]| chunk_loss_and_grads(cm, params, laps, samples, chunk);
        let results: Vec<Result<(f64, Vec<Vec<f32>>)>> = if parallel {
            chunks.par_iter().map(work).collect()
        } else {
            chunks.iter().map(work).collect()
        };

        let mut grad_sum: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        for r in results {
            let (loss, grads) = r?;
            loss_acc += loss;
            for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                kernels::axpy(1.0, g, acc);
            }
        }
        let inv = 1.0 / batch.len() as f32;
        for g in &mut grad_sum {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }
        let mut views: Vec<&mut [f32]> = params.iter_mut().map(|p| p.data_mut()).collect();
        optimizer.step(&mut views, &grad_sum);
    }
    Ok(EpochStats {
        mean_loss: loss_acc / order.len() as f64,
    })
}

/// Per-frame projection cache keyed by (lap, frame); projections depend
/// only on frozen weights, so overlapping evaluation windows share them.
struct ProjectionCache<'a> {
    cm: &'a CompiledModel,
    params: &'a [Tensor<f32>],
    laps: &'a [&'a LapLog],
    cache: HashMap<(usize, usize), Vec<Vec<f32>>>,
}

impl<'a> ProjectionCache<'a> {
    fn new(cm: &'a CompiledModel, params: &'a [Tensor<f32>], laps: &'a [&'a LapLog]) -> Self {
        ProjectionCache {
            cm,
            params,
            laps,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, lap: usize, frame: usize) -> &Vec<Vec<f32>> {
        self.cache.entry((lap, frame)).or_insert_with(|| {
            let img = self.laps[lap].image_f32(frame);
            frame_projections(self.cm, self.params, &img)
        })
    }

    /// Model output for a window, replaying only the recurrences.
    fn output(&mut self, w: &Window) -> Result<f32> {
        let total = w.len + w.pad;
        let mut per_path: Vec<Vec<Vec<f32>>> =
            vec![Vec::with_capacity(total); self.cm.paths.len()];
        for i in 0..total {
            let frame = w.start + i.saturating_sub(w.pad);
            let projs = self.get(w.lap, frame).clone();
            for (p, u) in projs.into_iter().enumerate() {
                per_path[p].push(u);
            }
        }
        let windows: Vec<&[Vec<f32>]> = per_path.iter().map(|v| v.as_slice()).collect();
        let out = reduce_windows(self.cm, self.params, &windows)?;
        out.item()
    }
}

/// Model prediction for one sample window, cache-free (feed-forward path).
fn predict_window(
    cm: &CompiledModel,
    params: &[Tensor<f32>],
    laps: &[&LapLog],
    w: &Window,
) -> Result<f32> {
    let frames = window_frames(laps, w);
    forward(cm, params, &frames)?.item()
}

fn eval_test_loss(
    cm: &CompiledModel,
    params: &[Tensor<f32>],
    laps: &[&LapLog],
    samples: &[(Window, Target)],
    parallel: bool,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut acc = 0.0;
    if cm.paths.is_empty() {
        let eval_one = |(w, t): &(Window, Target)| -> Result<f64> {
            let frames = window_frames(laps, w);
            let out = forward(cm, params, &frames)?;
            Ok(match t {
                Target::Class(label) => {
                    let mut probs = vec![0.0f32; out.numel()];
                    kernels::softmax(out.data(), &mut probs);
                    kernels::cross_entropy(&probs, *label) as f64
                }
                Target::Steering(y) => {
                    let p = out.item()?;
                    0.5 * ((p - y) as f64).powi(2)
                }
            })
        };
        let losses: Vec<Result<f64>> = if parallel {
            samples.par_iter().map(eval_one).collect()
        } else {
            samples.iter().map(eval_one).collect()
        };
        for l in losses {
            acc += l?;
        }
    } else {
        // Project each distinct frame once (in parallel when allowed), then
        // replay windows over the cached projections.
        let mut cache = ProjectionCache::new(cm, params, laps);
        if parallel {
            let mut keys: Vec<(usize, usize)> = samples
                .iter()
                .flat_map(|(w, _)| (0..w.len).map(|i| (w.lap, w.start + i)))
                .collect();
            keys.sort_unstable();
            keys.dedup();
            let projected: Vec<((usize, usize), Vec<Vec<f32>>)> = keys
                .par_iter()
                .map(|&(lap, frame)| {
                    let img = laps[lap].image_f32(frame);
                    ((lap, frame), frame_projections(cm, params, &img))
                })
                .collect();
            cache.cache.extend(projected);
        }
        for (w, t) in samples {
            let p = cache.output(w)?;
            match t {
                Target::Steering(y) => acc += 0.5 * ((p - y) as f64).powi(2),
                Target::Class(_) => {
                    return Err(Error::parameter("recurrent classifier is unsupported"))
                }
            }
        }
    }
    Ok(acc / samples.len() as f64)
}

pub struct TrainOutcome {
    /// Weights at the best test loss (falls back to final when no test set).
    pub best: ModelWeights,
    pub final_weights: ModelWeights,
    pub curve: LossCurve,
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub train_sample_count: usize,
    pub test_sample_count: usize,
}

fn collect_frame_samples(
    laps: &[&LapLog],
    lap_ids: &[usize],
    zone: Option<u8>,
    target_of: impl Fn(&LapLog, usize) -> Target,
) -> Vec<(Window, Target)> {
    let mut samples = Vec::new();
    for &lap in lap_ids {
        for i in 0..laps[lap].frames.len() {
            if let Some(z) = zone {
                if laps[lap].frames[i].zone != z {
                    continue;
                }
            }
            samples.push((
                Window {
                    lap,
                    start: i,
                    len: 1,
                    pad: 0,
                },
                target_of(laps[lap], i),
            ));
        }
    }
    samples
}

fn collect_window_samples(
    laps: &[&LapLog],
    lap_ids: &[usize],
    zone: u8,
    seq_len: usize,
    stride: usize,
) -> Vec<(Window, Target)> {
    let subset: Vec<&LapLog> = lap_ids.iter().map(|&i| laps[i]).collect();
    let segments = crate::datalog::extract_zone_frames(&subset, zone);
    // Remap segment lap indices back into the full lap list.
    make_sequences(&segments, seq_len, stride)
        .into_iter()
        .map(|mut w| {
            w.lap = lap_ids[w.lap];
            let y = laps[w.lap].frames[w.last_frame()].steering;
            (w, Target::Steering(y))
        })
        .collect()
}

fn train_model(
    spec: &ModelSpec,
    laps: &[&LapLog],
    train_samples: Vec<(Window, Target)>,
    test_samples: Vec<(Window, Target)>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_samples.is_empty() {
        return Err(Error::data(format!(
            "no training samples for model '{}'",
            spec.name
        )));
    }
    if config.epochs < 1 || config.batch_size < 1 {
        return Err(Error::parameter("epochs and batch_size must be >= 1"));
    }
    let cm = compile(spec)?;
    let mut weights = init_weights(spec, config.seed)?;
    let mut params: Vec<Tensor<f32>> = weights.as_params();
    let opt_cfg = OptimizerConfig {
        lr: config.learning_rate,
        ..OptimizerConfig::default()
    };
    let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
    let mut optimizer = Optimizer::new(opt_cfg, &sizes)?;

    let splitter = SeedSplitter::new(config.seed);
    let mut curve = LossCurve::default();
    let mut best: Option<(f64, usize, Vec<Tensor<f32>>)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = splitter.rng(&format!("shuffle/{}", spec.name), epoch as u64);
        order.shuffle(&mut rng);

        let stats = run_epoch(
            &cm,
            &mut params,
            &mut optimizer,
            laps,
            &train_samples,
            &order,
            config.batch_size,
            !config.deterministic,
        )?;
        let test_loss = eval_test_loss(&cm, &params, laps, &test_samples, !config.deterministic)?;
        curve.entries.push((stats.mean_loss, test_loss));

        let improved = match &best {
            None => true,
            Some((b, _, _)) => test_loss.is_finite() && test_loss < *b,
        };
        if improved {
            best = Some((test_loss, epoch, params.clone()));
        }
    }

    let (best_test_loss, best_epoch, best_params) = best.unwrap();
    let mut best_weights = weights.clone();
    best_weights.store_params(&best_params);
    best_weights.epochs = (best_epoch + 1) as u32;
    best_weights.seed = config.seed;

    weights.store_params(&params);
    weights.epochs = config.epochs as u32;
    weights.seed = config.seed;

    Ok(TrainOutcome {
        best: best_weights,
        final_weights: weights,
        curve,
        best_epoch,
        best_test_loss,
        train_sample_count: train_samples.len(),
        test_sample_count: test_samples.len(),
    })
}

/// Train the master classifier on every labeled frame of the split's base
/// laps; test loss comes from the held-out laps.
pub fn train_classifier(
    spec: &ModelSpec,
    laps: &[&LapLog],
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if spec.kind != ModelKind::Classifier {
        return Err(Error::parameter("train_classifier needs a classifier spec"));
    }
    let label = |lap: &LapLog, i: usize| {
        let z = lap.frames[i].zone;
        Target::Class((z.max(1) - 1) as usize)
    };
    let train = collect_frame_samples(laps, &split.train_laps, None, label);
    let test = collect_frame_samples(laps, &split.test_laps, None, label);
    train_model(spec, laps, train, test, config)
}

/// Train a steering regressor. `zone` restricts frames to one driving task
/// (SRNs); `None` trains on every frame (the single-model baseline).
pub fn train_regressor(
    spec: &ModelSpec,
    laps: &[&LapLog],
    split: &DatasetSplit,
    zone: Option<u8>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if spec.kind != ModelKind::Regressor {
        return Err(Error::parameter("train_regressor needs a regressor spec"));
    }
    let steering = |lap: &LapLog, i: usize| Target::Steering(lap.frames[i].steering);
    let (train, test) = if spec.is_recurrent() {
        let zone = zone.ok_or_else(|| {
            Error::parameter("recurrent regressors are zone models; zone required")
        })?;
        (
            collect_window_samples(
                laps,
                &split.train_laps,
                zone,
                spec.seq_len(),
                config.sequence_stride,
            ),
            collect_window_samples(
                laps,
                &split.test_laps,
                zone,
                spec.seq_len(),
                config.sequence_stride,
            ),
        )
    } else {
        (
            collect_frame_samples(laps, &split.train_laps, zone, steering),
            collect_frame_samples(laps, &split.test_laps, zone, steering),
        )
    };
    train_model(spec, laps, train, test, config)
}

/// Mean squared error of a regressor over test windows, in normalized
/// steering units. The flag threshold 20 corresponds to 10% of the ±100
/// steering range (RMSE ≈ 4.47).
pub const MSE_FLAG_THRESHOLD: f64 = 20.0;

pub struct MseReport {
    pub mse: f64,
    pub sample_count: usize,
    pub flagged: bool,
}

pub fn evaluate_mse(
    spec: &ModelSpec,
    weights: &ModelWeights,
    laps: &[&LapLog],
    windows: &[(Window, f32)],
) -> Result<MseReport> {
    if windows.is_empty() {
        return Err(Error::data("evaluate_mse on an empty test set"));
    }
    let cm = compile(spec)?;
    let params: Vec<Tensor<f32>> = weights.as_params();
    let mut acc = 0.0;
    if cm.paths.is_empty() {
        for (w, y) in windows {
            let p = predict_window(&cm, &params, laps, w)?;
            acc += ((p - y) as f64).powi(2);
        }
    } else {
        let mut cache = ProjectionCache::new(&cm, &params, laps);
        for (w, y) in windows {
            let p = cache.output(w)?;
            acc += ((p - y) as f64).powi(2);
        }
    }
    let mse = acc / windows.len() as f64;
    Ok(MseReport {
        mse,
        sample_count: windows.len(),
        flagged: mse > MSE_FLAG_THRESHOLD,
    })
}

/// Test windows with ground-truth steering for one zone of the held-out laps.
pub fn test_windows_for_zone(
    spec: &ModelSpec,
    laps: &[&LapLog],
    split: &DatasetSplit,
    zone: u8,
    stride: usize,
) -> Vec<(Window, f32)> {
    let samples = if spec.is_recurrent() {
        collect_window_samples(laps, &split.test_laps, zone, spec.seq_len(), stride)
    } else {
        collect_frame_samples(laps, &split.test_laps, Some(zone), |lap, i| {
            Target::Steering(lap.frames[i].steering)
        })
    };
    samples
        .into_iter()
        .map(|(w, t)| match t {
            Target::Steering(y) => (w, y),
            Target::Class(_) => unreachable!(),
        })
        .collect()
}

/// 5×5 confusion matrix (rows = true zone, columns = predicted) of the
/// classifier over the labeled frames of the given laps.
pub fn evaluate_confusion(
    spec: &ModelSpec,
    weights: &ModelWeights,
    laps: &[&LapLog],
    lap_ids: &[usize],
) -> Result<[[usize; 5]; 5]> {
    let cm = compile(spec)?;
    let params: Vec<Tensor<f32>> = weights.as_params();
    let mut matrix = [[0usize; 5]; 5];
    for &lap in lap_ids {
        for i in 0..laps[lap].frames.len() {
            let truth = laps[lap].frames[i].zone;
            if truth == 0 {
                continue;
            }
            let img = laps[lap].image_f32(i);
            let logits = forward(&cm, &params, &[img])?;
            let pred = argmax_lowest_tie(logits.data());
            matrix[(truth - 1) as usize][pred] += 1;
        }
    }
    Ok(matrix)
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest_tie(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-class recall of a confusion matrix row (NaN-free: empty rows recall 0).
pub fn per_zone_recall(matrix: &[[usize; 5]; 5]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (z, row) in matrix.iter().enumerate() {
        let total: usize = row.iter().sum();
        out[z] = if total == 0 {
            0.0
        } else {
            row[z] as f64 / total as f64
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalog::{FrameRecord, LapHeader, LapLog};
    use crate::models::{build_srn, Layer, ModelKind, ModelSpec};

    fn toy_lap(n: usize, h: u16, w: u16, steer: impl Fn(usize) -> f32) -> LapLog {
        let image_len = 6 * h as usize * w as usize;
        LapLog {
            header: LapHeader {
                track_hash: 1,
                direction: crate::datalog::Direction::Cw,
                dt: 0.05,
                height: h,
                width: w,
            },
            frames: (0..n)
                .map(|i| FrameRecord {
                    frame_index: i as u32,
                    timestamp: i as f64 * 0.05,
                    steering: steer(i),
                    throttle: 0.7,
                    frame_rate: 20.0,
                    zone: 1 + (i % 5) as u8,
                    image: (0..image_len)
                        .map(|j| {
                            let h = crate::rng::splitmix64((i as u64) << 32 | j as u64);
                            (h & 0xFF) as u8
                        })
                        .collect(),
                    s: None,
                })
                .collect(),
        }
    }

    #[test]
    fn window_counts_follow_the_arithmetic() {
        let segs = [ZoneSegment {
            lap: 0,
            start: 10,
            len: 25,
            zone: 2,
        }];
        let ws = make_sequences(&segs, 20, 1);
        assert_eq!(ws.len(), 6, "25 − 20 + 1 windows at stride 1");
        assert!(ws.iter().all(|w| w.pad == 0 && w.len == 20));
        assert_eq!(ws[0].start, 10);
        assert_eq!(ws[5].start, 15);
    }

    #[test]
    fn short_segment_yields_one_padded_window() {
        let segs = [ZoneSegment {
            lap: 0,
            start: 3,
            len: 5,
            zone: 2,
        }];
        let ws = make_sequences(&segs, 20, 1);
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].pad, 15, "15 repeats of the first frame");
        assert_eq!(ws[0].len, 5);
    }

    #[test]
    fn windows_never_cross_segments() {
        let segs = [
            ZoneSegment {
                lap: 0,
                start: 0,
                len: 30,
                zone: 2,
            },
            ZoneSegment {
                lap: 0,
                start: 50,
                len: 30,
                zone: 2,
            },
        ];
        for w in make_sequences(&segs, 20, 4) {
            let inside_first = w.start + w.len <= 30;
            let inside_second = w.start >= 50 && w.start + w.len <= 80;
            assert!(inside_first || inside_second);
        }
    }

    #[test]
    fn tiny_regressor_overfits_a_small_set() {
        // Capacity sanity: a small feed-forward model drives train MSE
        // below 1 on a 50-frame subset.
        let shape = [6usize, 12, 16];
        let spec = ModelSpec {
            name: "toy_overfit".into(),
            kind: ModelKind::Regressor,
            layers: vec![
                Layer::Conv {
                    depth: 8,
                    k: 5,
                    stride: 2,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Fc { out: 1 },
            ],
            input_shape: shape,
            output_dim: 1,
        };
        let lap = toy_lap(50, shape[1] as u16, shape[2] as u16, |i| {
            (i as f32 * 7.3).sin() * 40.0
        });
        let laps = [&lap];
        let split = DatasetSplit {
            train_laps: vec![0],
            test_laps: vec![0],
        };
        let config = TrainConfig {
            epochs: 200,
            batch_size: 10,
            learning_rate: 1e-2,
            seed: 7,
            sequence_stride: 1,
            deterministic: true,
        };
        let out = train_regressor(&spec, &laps, &split, None, &config).unwrap();
        let final_mse = 2.0 * out.curve.entries.last().unwrap().0;
        assert!(
            final_mse < 1.0,
            "overfit MSE {final_mse} after {} epochs",
            config.epochs
        );
        // Endpoint-decrease invariant.
        assert!(out.curve.entries.last().unwrap().0 < out.curve.entries[0].0);
        assert_eq!(out.curve.entries.len(), config.epochs);
    }

    #[test]
    fn deterministic_training_replays_bit_identically() {
        let shape = [6usize, 12, 16];
        let spec = build_srn(2, shape).unwrap();
        let lap = toy_lap(60, 12, 16, |i| (i as f32).cos() * 30.0);
        let laps = [&lap];
        let split = DatasetSplit {
            train_laps: vec![0],
            test_laps: vec![0],
        };
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 11,
            sequence_stride: 5,
            deterministic: true,
        };
        let a = train_regressor(&spec, &laps, &split, Some(2), &config).unwrap();
        let b = train_regressor(&spec, &laps, &split, Some(2), &config).unwrap();
        for ((_, ta), (_, tb)) in a.final_weights.tensors.iter().zip(&b.final_weights.tensors) {
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        for (ea, eb) in a.curve.entries.iter().zip(&b.curve.entries) {
            assert_eq!(ea.0.to_bits(), eb.0.to_bits());
            assert_eq!(ea.1.to_bits(), eb.1.to_bits());
        }
        // Parallel batches reduce in sample order, so they match too.
        let par = TrainConfig {
            deterministic: false,
            ..config.clone()
        };
        let c = train_regressor(&spec, &laps, &split, Some(2), &par).unwrap();
        for ((_, ta), (_, tc)) in a.final_weights.tensors.iter().zip(&c.final_weights.tensors) {
            assert_eq!(
                ta.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                tc.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn best_checkpoint_reproduces_its_recorded_test_loss() {
        let shape = [6usize, 12, 16];
        let spec = build_srn(2, shape).unwrap();
        let train_lap = toy_lap(60, 12, 16, |i| (i as f32).sin() * 20.0);
        let test_lap = toy_lap(55, 12, 16, |i| (i as f32 * 1.1).sin() * 20.0);
        let laps = [&train_lap, &test_lap];
        let split = DatasetSplit {
            train_laps: vec![0],
            test_laps: vec![1],
        };
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 3,
            sequence_stride: 5,
            deterministic: true,
        };
        let out = train_regressor(&spec, &laps, &split, Some(2), &config).unwrap();
        // Re-evaluate the checkpointed best weights on the same samples.
        let cm = compile(&spec).unwrap();
        let params: Vec<Tensor<f32>> = out.best.as_params();
        let test_samples = collect_window_samples(&laps, &split.test_laps, 2, 20, 5);
        let loss = eval_test_loss(&cm, &params, &laps, &test_samples, false).unwrap();
        assert_eq!(
            loss.to_bits(),
            out.best_test_loss.to_bits(),
            "re-evaluated best loss must be exactly the recorded one"
        );
    }

    #[test]
    fn evaluate_mse_analytic_cases() {
        let shape = [6usize, 12, 16];
        let spec = ModelSpec {
            name: "zero_model".into(),
            kind: ModelKind::Regressor,
            layers: vec![
                Layer::Conv {
                    depth: 1,
                    k: 5,
                    stride: 4,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Fc { out: 1 },
            ],
            input_shape: shape,
            output_dim: 1,
        };
        // Zero weights predict exactly 0 everywhere.
        let mut weights = init_weights(&spec, 0).unwrap();
        for (_, t) in weights.tensors.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let lap = toy_lap(10, 12, 16, |_| 0.0);
        let laps = [&lap];
        let windows: Vec<(Window, f32)> = (0..10)
            .map(|i| {
                (
                    Window {
                        lap: 0,
                        start: i,
                        len: 1,
                        pad: 0,
                    },
                    0.0f32,
                )
            })
            .collect();
        let report = evaluate_mse(&spec, &weights, &laps, &windows).unwrap();
        assert_eq!(report.mse, 0.0, "predictions equal targets");
        assert!(!report.flagged);

        // Constant offset of 2 gives MSE 4 and no flag; offset 5 flags.
        let off: Vec<(Window, f32)> = windows.iter().map(|(w, _)| (*w, -2.0f32)).collect();
        let report = evaluate_mse(&spec, &weights, &laps, &off).unwrap();
        assert!((report.mse - 4.0).abs() < 1e-9);
        assert!(!report.flagged, "MSE 4 sits inside the paper's 4..12 band");

        let far: Vec<(Window, f32)> = windows.iter().map(|(w, _)| (*w, 5.0f32)).collect();
        let report = evaluate_mse(&spec, &weights, &laps, &far).unwrap();
        assert!((report.mse - 25.0).abs() < 1e-9);
        assert!(report.flagged, "MSE above 20 must raise the flag");

        assert!(evaluate_mse(&spec, &weights, &laps, &[]).is_err());
    }

    #[test]
    fn confusion_rows_sum_to_frame_counts() {
        let shape = [6usize, 16, 24];
        let spec = crate::models::build_mcn(shape).unwrap();
        let weights = init_weights(&spec, 1).unwrap();
        let lap = toy_lap(25, 16, 24, |_| 0.0);
        let laps = [&lap];
        let m = evaluate_confusion(&spec, &weights, &laps, &[0]).unwrap();
        let mut per_zone = [0usize; 5];
        for f in &lap.frames {
            per_zone[(f.zone - 1) as usize] += 1;
        }
        for z in 0..5 {
            let row_sum: usize = m[z].iter().sum();
            assert_eq!(row_sum, per_zone[z]);
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_zone() {
        assert_eq!(argmax_lowest_tie(&[0.1, 0.9, 0.9, 0.2, 0.0]), 1);
        assert_eq!(argmax_lowest_tie(&[1.0, 1.0, 1.0, 1.0, 1.0]), 0);
    }
}
