//! Pipeline stages behind the subcommands: track generation, demonstration
//! recording, training, evaluation and closed-loop driving, plus the
//! hash-cached `run-all` chain.

use crate::manifest::PipelineManifest;
use hiersteer_core::checkpoint::{load_weights, save_weights};
use hiersteer_core::curves::{svg_line_plot, Series};
use hiersteer_core::datalog::{make_split, read_lap, write_lap, DatasetSplit, Direction, LapLog};
use hiersteer_core::error::{Error, Result};
use hiersteer_core::models::{param_count, ModelWeights};
use hiersteer_core::rng::{ContentHasher, SeedSplitter};
use hiersteer_core::router::{
    compare_baseline, drive_autonomous, predict_lap, predict_lap_single, Controller, LapTrace,
    Router,
};
use hiersteer_core::sim::{build_track, run_recording_lap, Perturbation, Track};
use hiersteer_core::trainer::{
    evaluate_confusion, evaluate_mse, per_zone_recall, test_windows_for_zone, train_classifier,
    train_regressor, TrainConfig, TrainOutcome,
};
use hiersteer_core::zoo::{ModelSet, MODEL_NAMES};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct Paths {
    pub out: PathBuf,
}

impl Paths {
    pub fn new(out: &Path) -> Self {
        Paths {
            out: out.to_path_buf(),
        }
    }

    pub fn track_toml(&self) -> PathBuf {
        self.out.join("track.toml")
    }
    pub fn track_csv(&self) -> PathBuf {
        self.out.join("track.csv")
    }
    pub fn track_svg(&self) -> PathBuf {
        self.out.join("track.svg")
    }
    pub fn laps_dir(&self) -> PathBuf {
        self.out.join("laps")
    }
    pub fn lap_file(&self, dir: Direction, index: usize) -> PathBuf {
        self.laps_dir()
            .join(format!("lap_{}_{index:03}.hml", dir.as_str()))
    }
    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.models_dir().join(format!("{name}.hmtw"))
    }
    pub fn checkpoint_final(&self, name: &str) -> PathBuf {
        self.models_dir().join(format!("{name}_final.hmtw"))
    }
    pub fn losses_csv(&self, name: &str) -> PathBuf {
        self.models_dir().join(format!("losses_{name}.csv"))
    }
    pub fn losses_svg(&self, name: &str) -> PathBuf {
        self.models_dir().join(format!("losses_{name}.svg"))
    }
    pub fn train_meta(&self) -> PathBuf {
        self.models_dir().join("train_meta.toml")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }
    pub fn drive_dir(&self) -> PathBuf {
        self.out.join("drive")
    }
    fn stamp(&self, stage: &str) -> PathBuf {
        self.out.join(format!(".stage_{stage}"))
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-track
// ---------------------------------------------------------------------------

pub fn cmd_gen_track(manifest: &PipelineManifest, paths: &Paths) -> Result<Track> {
    ensure_dir(&paths.out)?;
    let track = build_track(&manifest.track)?;
    std::fs::write(
        paths.track_toml(),
        toml::to_string_pretty(&manifest.track).expect("track config serializes"),
    )?;
    std::fs::write(paths.track_csv(), track.export_csv())?;
    std::fs::write(paths.track_svg(), track.export_svg())?;
    println!(
        "track: {:.1} m loop, {} cones, hash {:#018x}",
        track.total_length,
        track.cones.len(),
        track.hash()
    );
    Ok(track)
}

// ---------------------------------------------------------------------------
// record
// ---------------------------------------------------------------------------

pub fn cmd_record(manifest: &PipelineManifest, paths: &Paths) -> Result<()> {
    let track = build_track(&manifest.track)?;
    ensure_dir(&paths.laps_dir())?;
    let mut sim = manifest.sim;
    sim.rig = manifest.rig();
    let splitter = SeedSplitter::new(manifest.seed);
    let per_dir = manifest.record.laps_per_direction + manifest.record.test_laps_per_direction;

    for direction in [Direction::Cw, Direction::Ccw] {
        for lap_idx in 0..per_dir {
            let perturbation = manifest.record.perturb.then(|| {
                let mut rng =
                    splitter.rng(&format!("record/{}", direction.as_str()), lap_idx as u64);
                Perturbation {
                    amplitude: manifest.record.perturb_amplitude
                        * (0.5 + 0.5 * rng.gen::<f64>()),
                    period: manifest.record.perturb_period,
                    phase: rng.gen::<f64>() * std::f64::consts::TAU,
                }
            });
            let lap =
                run_recording_lap(&track, &sim, direction, perturbation, manifest.record.dt)?;
            let path = paths.lap_file(direction, lap_idx);
            write_lap(&lap, &path)?;
            println!(
                "recorded {} ({} frames)",
                path.file_name().unwrap().to_string_lossy(),
                lap.frames.len()
            );
        }
    }
    Ok(())
}

/// Load every recorded lap in a stable order (all cw, then all ccw).
pub fn load_laps(manifest: &PipelineManifest, paths: &Paths) -> Result<Vec<LapLog>> {
    let per_dir = manifest.record.laps_per_direction + manifest.record.test_laps_per_direction;
    let mut laps = Vec::with_capacity(2 * per_dir);
    for direction in [Direction::Cw, Direction::Ccw] {
        for lap_idx in 0..per_dir {
            let path = paths.lap_file(direction, lap_idx);
            if !path.exists() {
                return Err(Error::data(format!(
                    "missing lap file {} — run `record` first",
                    path.display()
                )));
            }
            laps.push(read_lap(&path)?);
        }
    }
    Ok(laps)
}

fn input_shape_of(laps: &[LapLog]) -> Result<[usize; 3]> {
    let h = laps[0].header.height as usize;
    let w = laps[0].header.width as usize;
    for lap in laps {
        if (lap.header.height as usize, lap.header.width as usize) != (h, w) {
            return Err(Error::data("laps disagree on image dimensions"));
        }
    }
    Ok([6, h, w])
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub models: std::collections::BTreeMap<String, TrainMetaEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainMetaEntry {
    pub train_samples: usize,
    pub test_samples: usize,
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub epochs: usize,
    pub base_laps: usize,
    pub duration_s: f64,
}

pub fn cmd_train(manifest: &PipelineManifest, paths: &Paths) -> Result<()> {
    let laps = load_laps(manifest, paths)?;
    let lap_refs: Vec<&LapLog> = laps.iter().collect();
    let shape = input_shape_of(&laps)?;
    let set = ModelSet::build(shape)?;
    ensure_dir(&paths.models_dir())?;
    let n_test = 2 * manifest.record.test_laps_per_direction;
    let mut meta = TrainMeta::default();

    for name in MODEL_NAMES {
        let section = manifest.model(name);
        let spec = set.by_name(name).unwrap();
        let split = make_split(&lap_refs, section.base_laps, n_test)?;
        let config = TrainConfig {
            epochs: section.epochs,
            batch_size: section.batch_size,
            learning_rate: section.learning_rate,
            seed: manifest.seed,
            sequence_stride: section.sequence_stride,
            deterministic: manifest.deterministic,
        };
        let started = std::time::Instant::now();
        let outcome: TrainOutcome = match name {
            "mcn" => train_classifier(spec, &lap_refs, &split, &config)?,
            "baseline" => train_regressor(spec, &lap_refs, &split, None, &config)?,
            _ => {
                let zone: u8 = name.trim_start_matches("srn_zone").parse().unwrap();
                train_regressor(spec, &lap_refs, &split, Some(zone), &config)?
            }
        };
        save_weights(&outcome.best, &paths.checkpoint(name))?;
        save_weights(&outcome.final_weights, &paths.checkpoint_final(name))?;
        std::fs::write(paths.losses_csv(name), outcome.curve.to_csv())?;
        let xs: Vec<f64> = (1..=outcome.curve.entries.len()).map(|i| i as f64).collect();
        let train_vals: Vec<f64> = outcome.curve.entries.iter().map(|e| e.0).collect();
        let test_vals: Vec<f64> = outcome.curve.entries.iter().map(|e| e.1).collect();
        let svg = svg_line_plot(
            &format!("{name} loss"),
            "epoch",
            "loss",
            &xs,
            &[
                Series {
                    name: "train",
                    values: &train_vals,
                },
                Series {
                    name: "test",
                    values: &test_vals,
                },
            ],
            Some(&format!(
                "best test loss {:.4e} @ epoch {}",
                outcome.best_test_loss,
                outcome.best_epoch + 1
            )),
        );
        std::fs::write(paths.losses_svg(name), svg)?;
        println!(
            "trained {name}: {} train / {} test samples, {} epochs in {:.1}s, \
             best test loss {:.4e} @ epoch {}",
            outcome.train_sample_count,
            outcome.test_sample_count,
            section.epochs,
            started.elapsed().as_secs_f64(),
            outcome.best_test_loss,
            outcome.best_epoch + 1
        );
        meta.models.insert(
            name.to_string(),
            TrainMetaEntry {
                train_samples: outcome.train_sample_count,
                test_samples: outcome.test_sample_count,
                best_epoch: outcome.best_epoch + 1,
                best_test_loss: outcome.best_test_loss,
                epochs: section.epochs,
                base_laps: section.base_laps,
                duration_s: started.elapsed().as_secs_f64(),
            },
        );
    }
    std::fs::write(
        paths.train_meta(),
        toml::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    Ok(())
}

fn load_model_weights(paths: &Paths, set: &ModelSet, name: &str) -> Result<ModelWeights> {
    let spec = set
        .by_name(name)
        .ok_or_else(|| Error::parameter(format!("unknown model {name}")))?;
    let path = paths.checkpoint(name);
    if !path.exists() {
        return Err(Error::data(format!(
            "missing checkpoint {} — run `train` first",
            path.display()
        )));
    }
    load_weights(&path, spec)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub recall_cw: [f64; 5],
    pub recall_ccw: [f64; 5],
    pub confusion_cw: Vec<Vec<usize>>,
    pub confusion_ccw: Vec<Vec<usize>>,
    pub zone_mse: [f64; 5],
    pub zone_mse_flagged: [bool; 5],
    pub open_loop_mse_router_cw: f64,
    pub open_loop_mse_router_ccw: f64,
    pub open_loop_mse_baseline_cw: f64,
    pub open_loop_mse_baseline_ccw: f64,
    pub param_counts: std::collections::BTreeMap<String, usize>,
    pub train_samples: std::collections::BTreeMap<String, usize>,
    pub recall_pass: bool,
    pub mse_pass: bool,
    pub pass: bool,
}

fn direction_split(split: &DatasetSplit, laps: &[LapLog]) -> (Vec<usize>, Vec<usize>) {
    let mut cw = Vec::new();
    let mut ccw = Vec::new();
    for &i in &split.test_laps {
        match laps[i].header.direction {
            Direction::Cw => cw.push(i),
            Direction::Ccw => ccw.push(i),
        }
    }
    (cw, ccw)
}

fn confusion_csv(matrix: &[[usize; 5]; 5]) -> String {
    let mut out = String::from("true_zone,pred_1,pred_2,pred_3,pred_4,pred_5,recall\n");
    let recalls = per_zone_recall(matrix);
    for z in 0..5 {
        let _ = write!(out, "{}", z + 1);
        for p in 0..5 {
            let _ = write!(out, ",{}", matrix[z][p]);
        }
        let _ = writeln!(out, ",{:.4}", recalls[z]);
    }
    out
}

pub fn cmd_eval(manifest: &PipelineManifest, paths: &Paths) -> Result<EvalSummary> {
    let laps = load_laps(manifest, paths)?;
    let lap_refs: Vec<&LapLog> = laps.iter().collect();
    let shape = input_shape_of(&laps)?;
    let set = ModelSet::build(shape)?;
    ensure_dir(&paths.eval_dir())?;

    let mcn_weights = load_model_weights(paths, &set, "mcn")?;
    let srn_weights: Vec<ModelWeights> = (1..=5)
        .map(|z| load_model_weights(paths, &set, &format!("srn_zone{z}")))
        .collect::<Result<_>>()?;
    let baseline_weights = load_model_weights(paths, &set, "baseline")?;

    // The held-out test laps are shared by every model's evaluation.
    let split = make_split(
        &lap_refs,
        2 * manifest.record.laps_per_direction,
        2 * manifest.record.test_laps_per_direction,
    )?;
    let (test_cw, test_ccw) = direction_split(&split, &laps);

    // Direction-split confusion matrices.
    let confusion_cw = evaluate_confusion(&set.mcn, &mcn_weights, &lap_refs, &test_cw)?;
    let confusion_ccw = evaluate_confusion(&set.mcn, &mcn_weights, &lap_refs, &test_ccw)?;
    let recall_cw = per_zone_recall(&confusion_cw);
    let recall_ccw = per_zone_recall(&confusion_ccw);
    std::fs::write(
        paths.eval_dir().join("confusion_cw.csv"),
        confusion_csv(&confusion_cw),
    )?;
    std::fs::write(
        paths.eval_dir().join("confusion_ccw.csv"),
        confusion_csv(&confusion_ccw),
    )?;

    // Per-zone regression MSE over held-out windows.
    let mut zone_mse = [0.0f64; 5];
    let mut zone_flagged = [false; 5];
    for z in 1..=5usize {
        let spec = &set.srns[z - 1];
        let windows =
            test_windows_for_zone(spec, &lap_refs, &split, z as u8, manifest.eval.stride);
        let report = evaluate_mse(spec, &srn_weights[z - 1], &lap_refs, &windows)?;
        zone_mse[z - 1] = report.mse;
        zone_flagged[z - 1] = report.flagged;
    }

    // Open-loop full-lap traces: hierarchical router vs baseline.
    let mut router = Router::new(
        &set.mcn,
        &mcn_weights,
        &set.srns,
        &srn_weights,
        manifest.sim.throttle,
    )?;
    let mut hier_traces: Vec<(usize, LapTrace)> = Vec::new();
    let mut base_traces: Vec<(usize, LapTrace)> = Vec::new();
    for &lap_id in split.test_laps.iter() {
        let hier = predict_lap(&mut router, &laps[lap_id])?;
        let base = predict_lap_single(&set.baseline, &baseline_weights, &laps[lap_id])?;
        let dir = laps[lap_id].header.direction.as_str();
        std::fs::write(
            paths
                .eval_dir()
                .join(format!("trace_router_{dir}_{lap_id}.csv")),
            hier.to_csv(),
        )?;
        std::fs::write(
            paths
                .eval_dir()
                .join(format!("trace_baseline_{dir}_{lap_id}.csv")),
            base.to_csv(),
        )?;
        hier_traces.push((lap_id, hier));
        base_traces.push((lap_id, base));
    }

    // Steering overlay plot for the first test lap of each direction.
    for (dir, ids) in [(Direction::Cw, &test_cw), (Direction::Ccw, &test_ccw)] {
        if let Some(&lap_id) = ids.first() {
            let hier = &hier_traces.iter().find(|(i, _)| *i == lap_id).unwrap().1;
            let base = &base_traces.iter().find(|(i, _)| *i == lap_id).unwrap().1;
            let xs: Vec<f64> = hier.points.iter().map(|p| p.distance).collect();
            let truth: Vec<f64> = hier
                .points
                .iter()
                .map(|p| p.steering_truth.unwrap_or(0.0) as f64)
                .collect();
            let pred: Vec<f64> = hier.points.iter().map(|p| p.steering as f64).collect();
            let basev: Vec<f64> = base.points.iter().map(|p| p.steering as f64).collect();
            let svg = svg_line_plot(
                &format!("steering vs lap distance ({})", dir.as_str()),
                "normalized lap distance",
                "steering",
                &xs,
                &[
                    Series {
                        name: "demonstrator",
                        values: &truth,
                    },
                    Series {
                        name: "hierarchical",
                        values: &pred,
                    },
                    Series {
                        name: "baseline",
                        values: &basev,
                    },
                ],
                Some(&format!(
                    "router MSE {:.1}, baseline MSE {:.1}",
                    hier.mse().unwrap_or(f64::NAN),
                    base.mse().unwrap_or(f64::NAN)
                )),
            );
            std::fs::write(
                paths.eval_dir().join(format!("steering_{}.svg", dir.as_str())),
                svg,
            )?;
        }
    }

    let mse_by_dir = |traces: &[(usize, LapTrace)], other: &[(usize, LapTrace)], dir| {
        let h: Vec<LapTrace> = traces
            .iter()
            .filter(|(i, _)| laps[*i].header.direction == dir)
            .map(|(_, t)| t.clone())
            .collect();
        let b: Vec<LapTrace> = other
            .iter()
            .filter(|(i, _)| laps[*i].header.direction == dir)
            .map(|(_, t)| t.clone())
            .collect();
        compare_baseline(&h, &b)
    };
    let cmp_cw = mse_by_dir(&hier_traces, &base_traces, Direction::Cw)?;
    let cmp_ccw = mse_by_dir(&hier_traces, &base_traces, Direction::Ccw)?;

    let mut param_counts = std::collections::BTreeMap::new();
    for name in MODEL_NAMES {
        param_counts.insert(name.to_string(), param_count(set.by_name(name).unwrap())?);
    }
    let train_samples = std::fs::read_to_string(paths.train_meta())
        .ok()
        .and_then(|t| toml::from_str::<TrainMeta>(&t).ok())
        .map(|m| {
            m.models
                .into_iter()
                .map(|(k, v)| (k, v.train_samples))
                .collect()
        })
        .unwrap_or_default();

    let recall_pass = recall_cw
        .iter()
        .chain(recall_ccw.iter())
        .all(|&r| r >= manifest.eval.recall_threshold);
    let mse_pass = zone_mse.iter().all(|&m| m < manifest.eval.mse_threshold);

    let summary = EvalSummary {
        recall_cw,
        recall_ccw,
        confusion_cw: confusion_cw.iter().map(|r| r.to_vec()).collect(),
        confusion_ccw: confusion_ccw.iter().map(|r| r.to_vec()).collect(),
        zone_mse,
        zone_mse_flagged: zone_flagged,
        open_loop_mse_router_cw: cmp_cw.mse_hier,
        open_loop_mse_router_ccw: cmp_ccw.mse_hier,
        open_loop_mse_baseline_cw: cmp_cw.mse_base,
        open_loop_mse_baseline_ccw: cmp_ccw.mse_base,
        param_counts,
        train_samples,
        recall_pass,
        mse_pass,
        pass: recall_pass && mse_pass,
    };

    std::fs::write(
        paths.eval_dir().join("summary.toml"),
        toml::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    std::fs::write(paths.eval_dir().join("report.txt"), eval_report(&summary))?;
    print!("{}", eval_report(&summary));
    Ok(summary)
}

fn eval_report(s: &EvalSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== evaluation report ==");
    let _ = writeln!(out, "classifier per-zone recall:");
    let _ = writeln!(
        out,
        "  cw : {}",
        s.recall_cw
            .iter()
            .enumerate()
            .map(|(z, r)| format!("z{}={:.3}", z + 1, r))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let _ = writeln!(
        out,
        "  ccw: {}",
        s.recall_ccw
            .iter()
            .enumerate()
            .map(|(z, r)| format!("z{}={:.3}", z + 1, r))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let _ = writeln!(out, "per-zone regression MSE (flag > 20):");
    for z in 0..5 {
        let _ = writeln!(
            out,
            "  zone {}: {:.2}{}",
            z + 1,
            s.zone_mse[z],
            if s.zone_mse_flagged[z] {
                "  ** needs refinement"
            } else {
                ""
            }
        );
    }
    let _ = writeln!(
        out,
        "open-loop lap MSE: router cw {:.2} / ccw {:.2}; baseline cw {:.2} / ccw {:.2}",
        s.open_loop_mse_router_cw,
        s.open_loop_mse_router_ccw,
        s.open_loop_mse_baseline_cw,
        s.open_loop_mse_baseline_ccw
    );
    let _ = writeln!(out, "parameter counts:");
    for (name, count) in &s.param_counts {
        let samples = s
            .train_samples
            .get(name)
            .map(|n| format!(", {n} train samples"))
            .unwrap_or_default();
        let _ = writeln!(out, "  {name:<10} {count:>9}{samples}");
    }
    let _ = writeln!(
        out,
        "gates: recall {} | zone MSE {} -> {}",
        if s.recall_pass { "pass" } else { "FAIL" },
        if s.mse_pass { "pass" } else { "FAIL" },
        if s.pass { "PASS" } else { "FAIL" }
    );
    out
}

// ---------------------------------------------------------------------------
// drive
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct DriveSummary {
    pub controller: String,
    pub directions: Vec<DriveDirectionSummary>,
    pub success: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DriveDirectionSummary {
    pub direction: String,
    pub laps_requested: usize,
    pub laps_completed: usize,
    pub strikes: usize,
    pub success: bool,
    pub aborted: Option<String>,
    pub first_strike: Option<(f64, f64, f64)>,
}

pub fn cmd_drive(
    manifest: &PipelineManifest,
    paths: &Paths,
    laps: usize,
    directions: &[Direction],
    controller_name: &str,
) -> Result<DriveSummary> {
    let track = build_track(&manifest.track)?;
    ensure_dir(&paths.drive_dir())?;
    let mut sim = manifest.sim;
    sim.rig = manifest.rig();

    let mut router_storage: Option<Router> = None;
    if controller_name == "router" {
        let shape = [6, sim.rig.image_height, sim.rig.image_width];
        let set = ModelSet::build(shape)?;
        let mcn_weights = load_model_weights(paths, &set, "mcn")?;
        let srn_weights: Vec<ModelWeights> = (1..=5)
            .map(|z| load_model_weights(paths, &set, &format!("srn_zone{z}")))
            .collect::<Result<_>>()?;
        let mut router = Router::new(
            &set.mcn,
            &mcn_weights,
            &set.srns,
            &srn_weights,
            sim.throttle,
        )?;
        router.steering_decimation = manifest.drive.steering_decimation.max(1);
        router_storage = Some(router);
    }

    let mut dir_summaries = Vec::new();
    for &direction in directions {
        let mut controller = match (&mut router_storage, controller_name) {
            (Some(r), "router") => Controller::Router(r),
            (_, "oracle") => Controller::Oracle,
            (_, other) => {
                return Err(Error::parameter(format!(
                    "unknown controller '{other}' (expected router|oracle)"
                )))
            }
        };
        let outcome = drive_autonomous(
            &track,
            &sim,
            &mut controller,
            direction,
            laps,
            manifest.record.dt,
        )?;
        for (i, trace) in outcome.traces.iter().enumerate() {
            std::fs::write(
                paths.drive_dir().join(format!(
                    "trace_{}_{}_{}.csv",
                    controller_name,
                    direction.as_str(),
                    i + 1
                )),
                trace.to_csv(),
            )?;
        }
        println!(
            "drive {} {}: {} laps, {} strikes{} -> {}",
            controller_name,
            direction.as_str(),
            outcome.traces.len(),
            outcome.strike_count,
            outcome
                .aborted
                .as_ref()
                .map(|a| format!(", aborted: {a}"))
                .unwrap_or_default(),
            if outcome.success { "success" } else { "FAIL" }
        );
        dir_summaries.push(DriveDirectionSummary {
            direction: direction.as_str().to_string(),
            laps_requested: laps,
            laps_completed: outcome.traces.len().min(laps),
            strikes: outcome.strike_count,
            success: outcome.success,
            aborted: outcome.aborted,
            first_strike: outcome.first_strike,
        });
    }

    let success = dir_summaries.iter().all(|d| d.success);
    let summary = DriveSummary {
        controller: controller_name.to_string(),
        directions: dir_summaries,
        success,
    };
    std::fs::write(
        paths
            .drive_dir()
            .join(format!("summary_{controller_name}.toml")),
        toml::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// run-all with content-hash staging
// ---------------------------------------------------------------------------

fn stage_hash(parts: &[&str]) -> u64 {
    let mut h = ContentHasher::new();
    for p in parts {
        h.update_str(p);
    }
    h.finish()
}

fn stage_fresh(paths: &Paths, stage: &str, hash: u64, outputs: &[PathBuf]) -> bool {
    let stamp = paths.stamp(stage);
    let recorded = std::fs::read_to_string(&stamp)
        .ok()
        .and_then(|t| u64::from_str_radix(t.trim_start_matches("0x").trim(), 16).ok());
    recorded == Some(hash) && outputs.iter().all(|p| p.exists())
}

fn mark_stage(paths: &Paths, stage: &str, hash: u64) -> Result<()> {
    std::fs::write(paths.stamp(stage), format!("{hash:#018x}\n"))?;
    Ok(())
}

/// gen-track → record → train → eval → drive, each stage skipped when its
/// config hash matches the previous run and the outputs are present.
pub fn cmd_run_all(manifest: &PipelineManifest, paths: &Paths) -> Result<(EvalSummary, DriveSummary)> {
    ensure_dir(&paths.out)?;
    // Record the fully resolved manifest next to the artifacts.
    std::fs::write(paths.out.join("manifest.toml"), manifest.to_toml())?;
    let track_cfg = toml::to_string(&manifest.track).expect("serializes");
    let sim_cfg = toml::to_string(&manifest.sim).expect("serializes");
    let record_cfg = toml::to_string(&manifest.record).expect("serializes");
    let seed_s = format!("{}|{}|{}", manifest.seed, manifest.scale, manifest.deterministic);

    let h_track = stage_hash(&[&track_cfg, &seed_s]);
    if stage_fresh(paths, "gen_track", h_track, &[paths.track_toml()]) {
        println!("gen-track: cached");
    } else {
        cmd_gen_track(manifest, paths)?;
        mark_stage(paths, "gen_track", h_track)?;
    }

    let h_record = stage_hash(&[&format!("{h_track:x}"), &sim_cfg, &record_cfg, &seed_s]);
    let first_lap = paths.lap_file(Direction::Cw, 0);
    if stage_fresh(paths, "record", h_record, &[first_lap]) {
        println!("record: cached");
    } else {
        cmd_record(manifest, paths)?;
        mark_stage(paths, "record", h_record)?;
    }

    let models_cfg = toml::to_string(&manifest.models).expect("serializes");
    let h_train = stage_hash(&[&format!("{h_record:x}"), &models_cfg, &seed_s]);
    let ck: Vec<PathBuf> = MODEL_NAMES.iter().map(|n| paths.checkpoint(n)).collect();
    if stage_fresh(paths, "train", h_train, &ck) {
        println!("train: cached");
    } else {
        cmd_train(manifest, paths)?;
        mark_stage(paths, "train", h_train)?;
    }

    let eval_cfg = toml::to_string(&manifest.eval).expect("serializes");
    let h_eval = stage_hash(&[&format!("{h_train:x}"), &eval_cfg]);
    let eval_summary = if stage_fresh(
        paths,
        "eval",
        h_eval,
        &[paths.eval_dir().join("summary.toml")],
    ) {
        println!("eval: cached");
        let text = std::fs::read_to_string(paths.eval_dir().join("summary.toml"))?;
        toml::from_str(&text).map_err(|e| Error::data(format!("stale eval summary: {e}")))?
    } else {
        let s = cmd_eval(manifest, paths)?;
        mark_stage(paths, "eval", h_eval)?;
        s
    };

    let drive_cfg = toml::to_string(&manifest.drive).expect("serializes");
    let h_drive = stage_hash(&[&format!("{h_train:x}"), &drive_cfg]);
    let drive_summary = if stage_fresh(
        paths,
        "drive",
        h_drive,
        &[paths.drive_dir().join("summary_router.toml")],
    ) {
        println!("drive: cached");
        let text = std::fs::read_to_string(paths.drive_dir().join("summary_router.toml"))?;
        toml::from_str(&text).map_err(|e| Error::data(format!("stale drive summary: {e}")))?
    } else {
        let s = cmd_drive(
            manifest,
            paths,
            manifest.drive.laps,
            &[Direction::Cw, Direction::Ccw],
            "router",
        )?;
        mark_stage(paths, "drive", h_drive)?;
        s
    };

    Ok((eval_summary, drive_summary))
}
