//! Training: the combined objective (task loss plus sink attraction), AdamW
//! over the trainable set, the warmup-then-freeze head selection schedule,
//! and the parameter-overhead audit.
//!
//! The backbone never trains. One warmup epoch runs with the attraction loss
//! off; auxiliary heads are then selected once from calibration attention and
//! stay fixed for the remaining epochs.

use std::sync::Arc;

use crate::backbone::{BackboneConfig, FrozenBackbone};
use crate::hsi::{BandPartition, Label, Sample};
use crate::model::{
    attention_mask, FocusModel, FocusParams, ModelError, TracedParams, PARAM_NAMES,
};
use crate::numerics::tape::{Graph, Mode};
use crate::numerics::tensor::BoolMask;
use crate::numerics::{NumericsError, Tensor};
use crate::parallel::parallel_map;
use crate::rng::SplitMix64;
use crate::sink::{self, HeadPartition, HeadScope, SinkError};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("label kind does not match task mode")]
    LabelMismatch,
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("NaN gradient in {leaf}")]
    NanGradient { leaf: &'static str },
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("sink error: {0}")]
    Sink(#[from] SinkError),
    #[error("numeric failure: {0}")]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub rho_aux: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub task: TaskKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 1e-2,
            epsilon: 1e-8,
            epochs: 100,
            lambda: 1e-3,
            rho_aux: 0.25,
            seed: 0,
            batch_size: 8,
            task: TaskKind::Classification,
        }
    }
}

/// First/second moment accumulators per trainable leaf plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(params: &FocusParams) -> OptimizerState {
        let zeros: Vec<Tensor> =
            params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        OptimizerState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn moments(&self, slot: usize) -> (&Tensor, &Tensor) {
        (&self.m[slot], &self.v[slot])
    }
}

/// Decoupled-weight-decay Adam step with bias-corrected moments.
/// Aborts on any non-finite gradient, naming the offending leaf.
pub fn optimizer_step(
    params: &mut FocusParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    debug_assert_eq!(grads.len(), PARAM_NAMES.len());
    for (grad, name) in grads.iter().zip(PARAM_NAMES.iter()) {
        if grad.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NanGradient { leaf: name });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (slot, theta) in params.tensors_mut().into_iter().enumerate() {
        let g = grads[slot].data();
        let m = state.m[slot].data_mut();
        let v = state.v[slot].data_mut();
        for (i, p) in theta.data_mut().iter_mut().enumerate() {
            *p *= 1.0 - cfg.learning_rate * cfg.weight_decay;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Per-sample training output: gradients in canonical parameter order plus
/// scalar diagnostics.
pub struct SampleLoss {
    pub grads: Vec<Tensor>,
    pub task_loss: f64,
    pub sink_loss: f64,
    pub predicted: Option<usize>,
    pub aux_sink_rate: Option<f64>,
}

fn target_class(label: &Label, task: TaskKind, classes: usize) -> Result<usize, TrainError> {
    match task {
        TaskKind::Classification => {
            let c = label.class().ok_or(TrainError::LabelMismatch)?;
            if c >= classes {
                return Err(TrainError::TargetOutOfRange { target: c, classes });
            }
            Ok(c)
        }
        TaskKind::Regression => Ok(0),
    }
}

/// Assemble the full objective for one sample on the given graph. For
/// classification this runs one forward per class so the cross-entropy is
/// defined over all K logits; the sink loss attaches to the target class's
/// pass. Returns (loss node, task value, sink value, per-class logits,
/// target-class attention record).
fn build_sample_objective(
    model: &FocusModel,
    graph: &mut Graph,
    traced: &TracedParams,
    sample: &Sample,
    mask: &BoolMask,
    pooled: &crate::model::PooledPatches,
    parts: &HeadPartition,
    lambda: f64,
    task: TaskKind,
) -> Result<
    (
        crate::numerics::ValueId,
        f64,
        f64,
        Vec<f64>,
        crate::backbone::AttentionRecord,
    ),
    TrainError,
> {
    let classes = model.classes();
    let target = target_class(&sample.label, task, classes)?;

    let mut logit_ids = Vec::with_capacity(classes);
    let mut target_pass = None;
    let class_count = match task {
        TaskKind::Classification => classes,
        TaskKind::Regression => 1,
    };
    for c in 0..class_count {
        let fwd = model.forward_class_traced(graph, traced, pooled, mask, c)?;
        if c == target {
            target_pass = Some((fwd.attention.clone(), fwd.layout));
        }
        logit_ids.push(fwd.logit);
    }
    let (attn_ids, layout) = target_pass.expect("target pass exists");

    let task_id = match task {
        TaskKind::Classification => {
            let logits = graph.concat_rows(&logit_ids)?;
            graph.cross_entropy(logits, target)?
        }
        TaskKind::Regression => {
            let value = sample.label.value().ok_or(TrainError::LabelMismatch)?;
            graph.squared_error(logit_ids[0], value)?
        }
    };
    let sink_id = sink::sink_loss_traced(graph, &attn_ids, layout.sink_index(), parts, lambda)?;
    let (loss, sink_value) = match sink_id {
        Some(s) => {
            let total = graph.add(task_id, s)?;
            (total, graph.value(s).scalar_value())
        }
        None => (task_id, 0.0),
    };
    let task_value = graph.value(task_id).scalar_value();
    let logit_values: Vec<f64> =
        logit_ids.iter().map(|&id| graph.value(id).scalar_value()).collect();
    let record = crate::backbone::detach_attention(graph, &attn_ids, layout.sink_index());
    Ok((loss, task_value, sink_value, logit_values, record))
}

/// Gradients of the combined objective for one sample.
pub fn sample_grads(
    model: &FocusModel,
    sample: &Sample,
    parts: &HeadPartition,
    lambda: f64,
    task: TaskKind,
) -> Result<SampleLoss, TrainError> {
    let pooled = model.pool(&sample.cube)?;
    let mask = attention_mask(&pooled.layout());
    let mut graph = Graph::new(Mode::Train);
    let traced = model.register_params(&mut graph);
    let (loss, task_loss, sink_loss, logits, record) = build_sample_objective(
        model, &mut graph, &traced, sample, &mask, &pooled, parts, lambda, task,
    )?;
    graph.backward(loss)?;
    let grads = vec![
        graph.gradient_or_zeros(traced.phi),
        graph.gradient_or_zeros(traced.prompts),
        graph.gradient_or_zeros(traced.sink),
        graph.gradient_or_zeros(traced.w),
        graph.gradient_or_zeros(traced.b),
    ];
    let predicted = match task {
        TaskKind::Classification => Some(crate::model::argmax_tie_low(&logits)),
        TaskKind::Regression => None,
    };
    let aux_sink_rate = sink::sink_rate(&record, HeadScope::AuxOnly(parts));
    Ok(SampleLoss { grads, task_loss, sink_loss, predicted, aux_sink_rate })
}

/// Value of the combined objective at the model's current parameters,
/// computed without building a tape (the finite-difference oracle drives
/// this).
pub fn loss_value(
    model: &FocusModel,
    sample: &Sample,
    parts: &HeadPartition,
    lambda: f64,
    task: TaskKind,
) -> Result<f64, TrainError> {
    let pooled = model.pool(&sample.cube)?;
    let mask = attention_mask(&pooled.layout());
    let mut graph = Graph::new(Mode::Inference);
    let traced = model.register_params(&mut graph);
    let (loss, ..) = build_sample_objective(
        model, &mut graph, &traced, sample, &mask, &pooled, parts, lambda, task,
    )?;
    debug_assert_eq!(graph.recorded_ops(), 0);
    Ok(graph.value(loss).scalar_value())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub epoch: usize,
    pub task_loss: f64,
    pub sink_loss: f64,
    pub aux_sink_rate: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,task_loss,sink_loss,aux_sink_rate,accuracy\n");
        for e in &self.entries {
            let rate = e.aux_sink_rate.map(|v| format!("{v:.9}")).unwrap_or_default();
            let acc = e.accuracy.map(|v| format!("{v:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.9},{:.9},{},{}\n",
                e.epoch, e.task_loss, e.sink_loss, rate, acc
            ));
        }
        out
    }
}

/// Everything fixed about a training run besides the dataset and optimizer
/// settings.
pub struct FitSetup {
    pub backbone: Arc<FrozenBackbone>,
    pub partition: BandPartition,
    pub patch_size: usize,
    pub use_sink: bool,
    pub classes: usize,
}

pub struct FitResult {
    pub model: FocusModel,
    pub parts: HeadPartition,
    pub log: TrainLog,
}

const CALIBRATION_SAMPLES: usize = 16;

/// Target-class attention records over a calibration slice (dataset order).
fn calibration_partition(
    model: &FocusModel,
    samples: &[Sample],
    rho: f64,
    task: TaskKind,
) -> Result<HeadPartition, TrainError> {
    if rho == 0.0 {
        let cfg = model.backbone().config();
        return Ok(HeadPartition::all_star(cfg.layers, cfg.heads));
    }
    let take = samples.len().min(CALIBRATION_SAMPLES);
    let records = parallel_map(&samples[..take], |_, sample| {
        let class = target_class(&sample.label, task, model.classes())?;
        Ok(model.forward_class(&sample.cube, class)?.attention)
    })
    .into_iter()
    .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(sink::select_aux_heads(&records, rho)?)
}

/// Train the FOCUS parameters on a frozen backbone.
///
/// Epoch 0 is a warmup with the attraction loss off; auxiliary heads are
/// selected right after it and stay fixed. The returned log has one entry per
/// epoch. Deterministic given (dataset, setup, config).
pub fn fit(samples: &[Sample], setup: &FitSetup, cfg: &TrainConfig) -> Result<FitResult, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.task == TaskKind::Classification {
        for c in 0..setup.classes {
            if !samples.iter().any(|s| s.label.class() == Some(c)) {
                return Err(TrainError::MissingClass(c));
            }
        }
    }
    let bands = setup.partition.band_count();
    let dim = setup.backbone.config().dim;
    let params =
        FocusParams::init(setup.classes, setup.partition.group_count(), bands, dim, cfg.seed);
    let mut model = FocusModel::new(
        setup.backbone.clone(),
        params,
        setup.partition.clone(),
        setup.patch_size,
        setup.use_sink,
    )?;
    let bb_cfg = *setup.backbone.config();
    let mut parts = HeadPartition::all_star(bb_cfg.layers, bb_cfg.heads);
    let mut state = OptimizerState::new(&model.params);
    let mut log = TrainLog::default();

    if cfg.epochs == 0 {
        let parts = calibration_partition(&model, samples, cfg.rho_aux, cfg.task)?;
        return Ok(FitResult { model, parts, log });
    }

    let shuffle_root = SplitMix64::new(cfg.seed ^ 0x0fc5_1b5e_7a11_0c1d);
    for epoch in 0..cfg.epochs {
        let lambda = if epoch == 0 { 0.0 } else { cfg.lambda };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        shuffle_root.fork(epoch as u64).shuffle(&mut order);

        let mut task_sum = 0.0;
        let mut sink_sum = 0.0;
        let mut rate_sum = 0.0;
        let mut rate_n = 0usize;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let outputs = parallel_map(batch, |_, &idx| {
                sample_grads(&model, &samples[idx], &parts, lambda, cfg.task)
            });
            let mut acc: Vec<Tensor> =
                model.params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            for (slot, out) in batch.iter().zip(outputs) {
                let out = out?;
                for (a, g) in acc.iter_mut().zip(&out.grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
                task_sum += out.task_loss;
                sink_sum += out.sink_loss;
                if let Some(rate) = out.aux_sink_rate {
                    rate_sum += rate;
                    rate_n += 1;
                }
                if out.predicted.is_some()
                    && out.predicted == samples[*slot].label.class()
                {
                    correct += 1;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for a in acc.iter_mut() {
                for v in a.data_mut() {
                    *v *= inv;
                }
            }
            optimizer_step(&mut model.params, &acc, &mut state, cfg)?;
        }

        if epoch == 0 {
            parts = calibration_partition(&model, samples, cfg.rho_aux, cfg.task)?;
        }
        let n = samples.len() as f64;
        log.entries.push(LogEntry {
            epoch,
            task_loss: task_sum / n,
            sink_loss: sink_sum / n,
            aux_sink_rate: (rate_n > 0).then(|| rate_sum / rate_n as f64),
            accuracy: (cfg.task == TaskKind::Classification).then(|| correct as f64 / n),
        });
    }
    Ok(FitResult { model, parts, log })
}

/// Trainable scalars over backbone scalars, both by direct enumeration.
pub fn overhead_ratio(params: &FocusParams, backbone: &BackboneConfig) -> f64 {
    params.trainable_count() as f64 / backbone.param_count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsi::{default_partition, generate_synthetic, SyntheticSpec};

    fn tiny_dataset(seed: u64) -> Vec<Sample> {
        generate_synthetic(&SyntheticSpec {
            classes: 2,
            bands: 8,
            height: 8,
            width: 8,
            samples_per_class: 3,
            groups: 2,
            discriminative_group: vec![0, 1],
            amplitude: 0.3,
            noise_sigma: 0.01,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn tiny_setup(seed: u64) -> FitSetup {
        let samples = tiny_dataset(seed);
        let partition = default_partition(samples[0].cube.wavelengths(), Some(2)).unwrap();
        FitSetup {
            backbone: Arc::new(
                FrozenBackbone::init_frozen(BackboneConfig {
                    dim: 8,
                    layers: 2,
                    heads: 2,
                    mlp_ratio: 2.0,
                    seed,
                })
                .unwrap(),
            ),
            partition,
            patch_size: 4,
            use_sink: true,
            classes: 2,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 4, seed: 5, ..TrainConfig::default() }
    }

    #[test]
    fn adamw_first_step_matches_hand_evaluation() {
        let mut params = FocusParams::init(1, 1, 1, 1, 0);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let grads: Vec<Tensor> =
            params.tensors().iter().map(|t| Tensor::filled(t.shape().to_vec(), 1.0)).collect();
        let mut state = OptimizerState::new(&params);
        let cfg = TrainConfig::default();
        optimizer_step(&mut params, &grads, &mut state, &cfg).unwrap();
        // m_hat = v_hat = 1 at step 1, decay has no effect at theta = 0:
        // theta_1 = -lr / (1 + eps)
        let expected = -cfg.learning_rate / (1.0 + cfg.epsilon);
        for t in params.tensors() {
            for v in t.data() {
                assert!((v - expected).abs() < 1e-18, "{v} vs {expected}");
            }
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut params = FocusParams::init(2, 2, 4, 4, 9);
        let before: Vec<Tensor> = params.tensors().iter().map(|t| (*t).clone()).collect();
        let grads: Vec<Tensor> =
            params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let mut state = OptimizerState::new(&params);
        let cfg = TrainConfig::default();
        optimizer_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let factor = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for (b, a) in before.iter().zip(params.tensors()) {
            for (x, y) in b.data().iter().zip(a.data()) {
                assert!((x * factor - y).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn nan_gradient_aborts_naming_the_leaf() {
        let mut params = FocusParams::init(1, 1, 2, 2, 0);
        let mut grads: Vec<Tensor> =
            params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        grads[2].data_mut()[0] = f64::NAN;
        let mut state = OptimizerState::new(&params);
        match optimizer_step(&mut params, &grads, &mut state, &TrainConfig::default()) {
            Err(TrainError::NanGradient { leaf }) => assert_eq!(leaf, "sink"),
            other => panic!("expected NanGradient, got {other:?}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_full_objective() {
        let samples = tiny_dataset(3);
        let setup = tiny_setup(3);
        // A couple of optimizer steps first so the readout is nonzero and
        // gradients flow everywhere.
        let warm = fit(&samples, &setup, &tiny_cfg()).unwrap();
        let model = warm.model;
        let parts = warm.parts;
        let lambda = 1e-3;
        let sample = &samples[1];

        let analytic = sample_grads(&model, sample, &parts, lambda, TaskKind::Classification)
            .unwrap()
            .grads;
        let mut point: Vec<Tensor> = model.params.tensors().iter().map(|t| (*t).clone()).collect();
        let f = |ps: &[Tensor]| {
            let mut m = model.clone();
            for (dst, src) in m.params.tensors_mut().into_iter().zip(ps) {
                *dst = src.clone();
            }
            loss_value(&m, sample, &parts, lambda, TaskKind::Classification).unwrap()
        };
        let err =
            crate::numerics::finite_diff_check(f, &mut point, &analytic, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn fit_zero_epochs_returns_initialization() {
        let samples = tiny_dataset(7);
        let setup = tiny_setup(7);
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let result = fit(&samples, &setup, &cfg).unwrap();
        let fresh = FocusParams::init(2, 2, 8, 8, cfg.seed);
        assert_eq!(result.model.params, fresh);
        assert!(result.log.entries.is_empty());
        assert_eq!(result.parts.layer_count(), 2);
    }

    #[test]
    fn fit_is_deterministic_and_keeps_backbone_frozen() {
        let samples = tiny_dataset(11);
        let setup = tiny_setup(11);
        let before = setup.backbone.checksum();
        let a = fit(&samples, &setup, &tiny_cfg()).unwrap();
        let b = fit(&samples, &setup, &tiny_cfg()).unwrap();
        assert_eq!(a.model.params, b.model.params, "bitwise identical runs");
        assert_eq!(a.log, b.log);
        assert_eq!(a.parts, b.parts);
        assert_eq!(setup.backbone.checksum(), before, "backbone must stay frozen");
    }

    #[test]
    fn lambda_changes_training_trajectory() {
        let samples = tiny_dataset(13);
        let setup = tiny_setup(13);
        let with = fit(&samples, &setup, &tiny_cfg()).unwrap();
        let without =
            fit(&samples, &setup, &TrainConfig { lambda: 0.0, ..tiny_cfg() }).unwrap();
        assert_ne!(with.model.params, without.model.params);
        // Sink loss column is zero throughout the lambda = 0 run.
        assert!(without.log.entries.iter().all(|e| e.sink_loss == 0.0));
        assert!(with.log.entries.iter().skip(1).any(|e| e.sink_loss != 0.0));
    }

    #[test]
    fn task_loss_decreases_on_separable_data() {
        let samples = generate_synthetic(&SyntheticSpec {
            classes: 2,
            bands: 8,
            height: 8,
            width: 8,
            samples_per_class: 6,
            groups: 2,
            discriminative_group: vec![0, 1],
            amplitude: 0.35,
            noise_sigma: 0.005,
            seed: 21,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let setup = tiny_setup(21);
        let cfg = TrainConfig { epochs: 6, batch_size: 4, seed: 2, ..TrainConfig::default() };
        let result = fit(&samples, &setup, &cfg).unwrap();
        let first = result.log.entries.first().unwrap().task_loss;
        let last = result.log.entries.last().unwrap().task_loss;
        assert!(last < first, "task loss should drop: {first} -> {last}");
    }

    #[test]
    fn regression_mode_trains_and_logs_without_accuracy() {
        let samples = generate_synthetic(&SyntheticSpec {
            classes: 1,
            bands: 8,
            height: 8,
            width: 8,
            samples_per_class: 6,
            groups: 2,
            discriminative_group: vec![1],
            amplitude: 0.3,
            noise_sigma: 0.005,
            regression: true,
            seed: 31,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let mut setup = tiny_setup(31);
        setup.classes = 1;
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 3,
            seed: 4,
            task: TaskKind::Regression,
            ..TrainConfig::default()
        };
        let result = fit(&samples, &setup, &cfg).unwrap();
        assert!(result.log.entries.iter().all(|e| e.accuracy.is_none()));
        let first = result.log.entries.first().unwrap().task_loss;
        let last = result.log.entries.last().unwrap().task_loss;
        assert!(last < first, "regression loss should drop: {first} -> {last}");
    }

    #[test]
    fn missing_class_rejected() {
        let samples: Vec<Sample> = tiny_dataset(3)
            .into_iter()
            .filter(|s| s.label.class() == Some(0))
            .collect();
        let setup = tiny_setup(3);
        assert!(matches!(
            fit(&samples, &setup, &tiny_cfg()),
            Err(TrainError::MissingClass(1))
        ));
        assert!(matches!(fit(&[], &setup, &tiny_cfg()), Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn overhead_ratio_at_paper_scale() {
        let params = FocusParams::init(4, 10, 204, 768, 0);
        let backbone = BackboneConfig { dim: 768, layers: 12, heads: 12, mlp_ratio: 4.0, seed: 0 };
        let ratio = overhead_ratio(&params, &backbone);
        assert!(ratio < 0.01, "ratio {ratio}");
        assert_eq!(params.trainable_count(), 4 * 10 * 768 + 768 + 204 * 768 + 768 + 4);
    }

    #[test]
    fn train_log_csv_schema() {
        let log = TrainLog {
            entries: vec![LogEntry {
                epoch: 0,
                task_loss: 0.7,
                sink_loss: -1e-4,
                aux_sink_rate: None,
                accuracy: Some(0.5),
            }],
        };
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,task_loss,sink_loss,aux_sink_rate,accuracy");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,0.7"), "{row}");
        assert_eq!(row.split(',').count(), 5);
    }
}
