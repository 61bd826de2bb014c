//! Pipeline manifest: one TOML file (plus a handful of CLI overrides)
//! drives every stage, and one seed feeds every random stream.

use hiersteer_core::error::{Error, Result};
use hiersteer_core::sim::{SimConfig, TrackConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordSection {
    /// Demonstration (base-log pool) laps per direction.
    pub laps_per_direction: usize,
    /// Held-out test laps per direction.
    pub test_laps_per_direction: usize,
    pub dt: f64,
    /// Sinusoidal recovery perturbation while recording.
    pub perturb: bool,
    pub perturb_amplitude: f64,
    pub perturb_period: f64,
}

impl Default for RecordSection {
    fn default() -> Self {
        RecordSection {
            laps_per_direction: 10,
            test_laps_per_direction: 4,
            dt: 0.05,
            perturb: true,
            perturb_amplitude: 0.06,
            perturb_period: 6.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub epochs: usize,
    /// Base demonstration laps used for training (split across directions).
    pub base_laps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sequence_stride: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            epochs: 200,
            base_laps: 8,
            batch_size: 8,
            learning_rate: 1e-3,
            sequence_stride: 4,
        }
    }
}

/// Training schedule defaults: base-log counts follow the reduced-data
/// pattern (zones 1/4/5 train from 8 base logs, the classifier and zones
/// 2/3 from all 20), epochs 100-300 by model.
fn default_models() -> BTreeMap<String, ModelSection> {
    let mut m = BTreeMap::new();
    let insert = |m: &mut BTreeMap<String, ModelSection>,
                  name: &str,
                  epochs: usize,
                  base_laps: usize,
                  batch: usize| {
        m.insert(
            name.to_string(),
            ModelSection {
                epochs,
                base_laps,
                batch_size: batch,
                ..ModelSection::default()
            },
        );
    };
    insert(&mut m, "mcn", 100, 20, 32);
    insert(&mut m, "srn_zone1", 200, 8, 32);
    insert(&mut m, "srn_zone2", 200, 20, 8);
    insert(&mut m, "srn_zone3", 200, 20, 8);
    insert(&mut m, "srn_zone4", 300, 8, 8);
    insert(&mut m, "srn_zone5", 200, 8, 8);
    insert(&mut m, "baseline", 100, 20, 32);
    m
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Per-zone recall gate for the classifier.
    pub recall_threshold: f64,
    /// Per-zone regression MSE gate (normalized steering units).
    pub mse_threshold: f64,
    /// Window stride when building test windows.
    pub stride: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            recall_threshold: 0.9,
            mse_threshold: 20.0,
            stride: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveSection {
    pub laps: usize,
    /// Steering update decimation (1 = every inference step).
    pub steering_decimation: usize,
}

impl Default for DriveSection {
    fn default() -> Self {
        DriveSection {
            laps: 3,
            steering_decimation: 1,
        }
    }
}

/// Field-wise override of one model's schedule entry.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelPatch {
    pub epochs: Option<usize>,
    pub base_laps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub sequence_stride: Option<usize>,
}

impl ModelPatch {
    fn apply(&self, base: &mut ModelSection) {
        if let Some(v) = self.epochs {
            base.epochs = v;
        }
        if let Some(v) = self.base_laps {
            base.base_laps = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.sequence_stride {
            base.sequence_stride = v;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineManifest {
    pub seed: u64,
    /// Image scale relative to the 168×94 recording resolution.
    pub scale: f64,
    pub deterministic: bool,
    pub track: TrackConfig,
    pub sim: SimConfig,
    pub record: RecordSection,
    pub models: BTreeMap<String, ModelSection>,
    pub eval: EvalSection,
    pub drive: DriveSection,
}

impl Default for PipelineManifest {
    fn default() -> Self {
        PipelineManifest {
            seed: 42,
            scale: 1.0,
            deterministic: false,
            track: TrackConfig::default(),
            sim: SimConfig::default(),
            record: RecordSection::default(),
            models: default_models(),
            eval: EvalSection::default(),
            drive: DriveSection::default(),
        }
    }
}

/// Manifest as written on disk: model sections are sparse patches.
#[derive(Default, Deserialize)]
#[serde(default)]
struct RawManifest {
    seed: Option<u64>,
    scale: Option<f64>,
    deterministic: Option<bool>,
    track: Option<TrackConfig>,
    sim: Option<SimConfig>,
    record: Option<RecordSection>,
    models: BTreeMap<String, ModelPatch>,
    eval: Option<EvalSection>,
    drive: Option<DriveSection>,
}

impl PipelineManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: RawManifest = toml::from_str(&text)
            .map_err(|e| Error::parameter(format!("manifest {}: {e}", path.display())))?;
        let mut manifest = PipelineManifest::default();
        if let Some(v) = raw.seed {
            manifest.seed = v;
        }
        if let Some(v) = raw.scale {
            manifest.scale = v;
        }
        if let Some(v) = raw.deterministic {
            manifest.deterministic = v;
        }
        if let Some(v) = raw.track {
            manifest.track = v;
        }
        if let Some(v) = raw.sim {
            manifest.sim = v;
        }
        if let Some(v) = raw.record {
            manifest.record = v;
        }
        if let Some(v) = raw.eval {
            manifest.eval = v;
        }
        if let Some(v) = raw.drive {
            manifest.drive = v;
        }
        for (name, patch) in &raw.models {
            let entry = manifest
                .models
                .entry(name.clone())
                .or_insert_with(ModelSection::default);
            patch.apply(entry);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::parameter(format!(
                "scale must be in (0, 1], got {}",
                self.scale
            )));
        }
        for name in hiersteer_core::zoo::MODEL_NAMES {
            let section = self
                .models
                .get(name)
                .ok_or_else(|| Error::parameter(format!("missing [models.{name}] section")))?;
            if section.epochs == 0 || section.batch_size == 0 {
                return Err(Error::parameter(format!(
                    "[models.{name}] epochs and batch_size must be >= 1"
                )));
            }
            if section.base_laps > 2 * self.record.laps_per_direction
                || section.base_laps % 2 != 0
            {
                return Err(Error::parameter(format!(
                    "[models.{name}] base_laps {} must be even and within the \
                     recorded pool of {}",
                    section.base_laps,
                    2 * self.record.laps_per_direction
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> &ModelSection {
        &self.models[name]
    }

    /// Recording resolution after scaling.
    pub fn rig(&self) -> hiersteer_core::sim::CameraRig {
        self.sim.rig.scaled(self.scale)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}
