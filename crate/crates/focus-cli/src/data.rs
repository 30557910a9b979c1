//! Dataset directory layout and checkpoint persistence.
//!
//! A dataset directory holds `sample_NNNN.hsc` cubes, `mask_NNNN.pgm` lesion
//! masks, `labels.csv` (`sample_id,label`) and `ground_truth.json`. A
//! checkpoint directory holds `model.fpm`, `backbone.fwt`, `heads.csv`,
//! `train_log.csv`, `optimizer.fos` and `train_manifest.json`.

use std::fs;
use std::io::Write;
use std::path::Path;

use focus::backbone::{BackboneError, FrozenBackbone};
use focus::hsi::format::{load_cube, load_mask_pgm, save_cube, save_mask_pgm};
use focus::hsi::{HsiError, Label, Sample};
use focus::model::{FocusParams, ModelError};
use focus::sink::{HeadPartition, SinkError};
use focus::train::{OptimizerState, TaskKind, TrainError, TrainLog};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Hsi(#[from] HsiError),
    #[error("{0}")]
    Backbone(#[from] BackboneError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Sink(#[from] SinkError),
    #[error("{0}")]
    Saliency(#[from] focus::saliency::SaliencyError),
    #[error("{0}")]
    Eval(#[from] focus::eval::EvalError),
    #[error("{0}")]
    Train(TrainError),
    #[error("{0}")]
    Ablation(#[from] focus::ablation::AblationError),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        CliError::Train(e)
    }
}

impl CliError {
    /// 2 usage, 3 data, 4 numeric abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Train(TrainError::NanGradient { .. }) => 4,
            CliError::Ablation(focus::ablation::AblationError::Train {
                source: TrainError::NanGradient { .. },
                ..
            }) => 4,
            _ => 3,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelJson {
    Class(usize),
    Value(f64),
}

/// One record of `ground_truth.json`.
#[derive(Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub sample_id: String,
    pub label: LabelJson,
    pub true_bands: Vec<usize>,
    /// Inclusive [x0, y0, x1, y1]; absent for lesion-free samples.
    pub lesion_bbox: Option<[usize; 4]>,
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:04}")
}

pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut labels = String::from("sample_id,label\n");
    let mut records = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let id = sample_id(i);
        save_cube(&sample.cube, &dir.join(format!("{id}.hsc")))?;
        save_mask_pgm(&sample.lesion_mask, &dir.join(format!("mask_{i:04}.pgm")))?;
        let label_json = match &sample.label {
            Label::Class(c) => {
                labels.push_str(&format!("{id},{c}\n"));
                LabelJson::Class(*c)
            }
            Label::Value(v) => {
                labels.push_str(&format!("{id},{v}\n"));
                LabelJson::Value(*v)
            }
        };
        records.push(GroundTruthRecord {
            sample_id: id,
            label: label_json,
            true_bands: sample.true_bands.clone(),
            lesion_bbox: sample.lesion_mask.bbox().map(|(x0, y0, x1, y1)| [x0, y0, x1, y1]),
        });
    }
    fs::write(dir.join("labels.csv"), labels)?;
    let json = serde_json::to_string_pretty(&records)?;
    fs::write(dir.join("ground_truth.json"), json)?;
    Ok(())
}

pub struct LoadedDataset {
    pub samples: Vec<Sample>,
}

pub fn load_dataset(dir: &Path, task: TaskKind) -> Result<LoadedDataset, CliError> {
    let labels_text = fs::read_to_string(dir.join("labels.csv"))
        .map_err(|e| CliError::Data(format!("labels.csv: {e}")))?;
    let truth_text = fs::read_to_string(dir.join("ground_truth.json"))
        .map_err(|e| CliError::Data(format!("ground_truth.json: {e}")))?;
    let records: Vec<GroundTruthRecord> = serde_json::from_str(&truth_text)?;
    let truth_by_id: std::collections::HashMap<&str, &GroundTruthRecord> =
        records.iter().map(|r| (r.sample_id.as_str(), r)).collect();

    let mut samples = Vec::new();
    for (lineno, line) in labels_text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let (id, label_text) = line
            .split_once(',')
            .ok_or_else(|| CliError::Data(format!("labels.csv line {}: {line:?}", lineno + 1)))?;
        let label = match task {
            TaskKind::Classification => Label::Class(label_text.trim().parse().map_err(|_| {
                CliError::Data(format!("labels.csv line {}: bad class {label_text:?}", lineno + 1))
            })?),
            TaskKind::Regression => Label::Value(label_text.trim().parse().map_err(|_| {
                CliError::Data(format!("labels.csv line {}: bad value {label_text:?}", lineno + 1))
            })?),
        };
        let index: usize = id
            .strip_prefix("sample_")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Data(format!("unrecognized sample id {id:?}")))?;
        let cube = load_cube(&dir.join(format!("{id}.hsc")))?;
        let mask = load_mask_pgm(&dir.join(format!("mask_{index:04}.pgm")))?;
        let truth = truth_by_id
            .get(id)
            .ok_or_else(|| CliError::Data(format!("{id} missing from ground_truth.json")))?;
        samples.push(Sample {
            cube,
            label,
            lesion_mask: mask,
            true_bands: truth.true_bands.clone(),
        });
    }
    if samples.is_empty() {
        return Err(CliError::Data(format!("no samples found in {}", dir.display())));
    }
    Ok(LoadedDataset { samples })
}

/// Everything the explain/eval paths need to rebuild the model around the
/// binary weight files.
#[derive(Serialize, Deserialize, Clone, Copy)]
pub struct TrainManifest {
    pub patch_size: usize,
    pub groups: usize,
    pub classes: usize,
    pub use_sink: bool,
    pub rho_aux: f64,
    pub lambda: f64,
    pub seed: u64,
    pub regression: bool,
}

pub struct Checkpoint {
    pub params: FocusParams,
    pub backbone: std::sync::Arc<FrozenBackbone>,
    pub parts: HeadPartition,
    pub manifest: TrainManifest,
}

pub fn write_checkpoint(
    dir: &Path,
    params: &FocusParams,
    backbone: &FrozenBackbone,
    parts: &HeadPartition,
    manifest: &TrainManifest,
    log: &TrainLog,
    optimizer: Option<&OptimizerState>,
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    params.save(&dir.join("model.fpm"))?;
    backbone.save(&dir.join("backbone.fwt"))?;
    fs::write(dir.join("heads.csv"), parts.to_csv())?;
    fs::write(dir.join("train_log.csv"), log.to_csv())?;
    fs::write(dir.join("train_manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    if let Some(state) = optimizer {
        write_optimizer_state(&dir.join("optimizer.fos"), params, state)?;
    }
    Ok(())
}

/// Optimizer sidecar: magic "FOS1", u64 step, then per-parameter first and
/// second moments as little-endian f32 in canonical parameter order.
fn write_optimizer_state(
    path: &Path,
    params: &FocusParams,
    state: &OptimizerState,
) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(b"FOS1")?;
    w.write_all(&(state.step as u64).to_le_bytes())?;
    for slot in 0..params.tensors().len() {
        let (m, v) = state.moments(slot);
        for value in m.data().iter().chain(v.data()) {
            w.write_all(&(*value as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CliError> {
    let manifest: TrainManifest = serde_json::from_str(
        &fs::read_to_string(dir.join("train_manifest.json"))
            .map_err(|e| CliError::Data(format!("train_manifest.json: {e}")))?,
    )?;
    let params = FocusParams::load(&dir.join("model.fpm"))?;
    let backbone = std::sync::Arc::new(FrozenBackbone::load(&dir.join("backbone.fwt"))?);
    let parts = HeadPartition::from_csv(
        &fs::read_to_string(dir.join("heads.csv"))
            .map_err(|e| CliError::Data(format!("heads.csv: {e}")))?,
    )?;
    Ok(Checkpoint { params, backbone, parts, manifest })
}
