//! Three-arm sink ablation: no sink token, sink token without the attraction
//! loss, and the full mechanism. All arms share seeds and data, so rows are
//! directly comparable.

use crate::eval::{self, EvalError};
use crate::hsi::Sample;
use crate::saliency::CubeMode;
use crate::train::{fit, FitSetup, TrainConfig, TrainError};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("training failed in arm {arm:?}: {source}")]
    Train { arm: &'static str, source: TrainError },
    #[error("evaluation failed in arm {arm:?}: {source}")]
    Eval { arm: &'static str, source: EvalError },
}

pub const ARM_NO_SINK: &str = "w/o Sink";
pub const ARM_SINK_NO_LOSS: &str = "+ Sink, no loss";
pub const ARM_FULL: &str = "+ Sink & Loss";

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub config: &'static str,
    pub accuracy: Option<f64>,
    pub bio_at_k: Option<f64>,
    pub collapse_rate: f64,
    pub sink_consistency: f64,
    /// Aux-head sink absorption; undefined without a sink token.
    pub sink_absorption: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("config,accuracy,bio_at_5,collapse_rate,sink_consistency,sink_absorption\n");
        for r in &self.rows {
            let acc = r.accuracy.map(|v| format!("{v:.6}")).unwrap_or_default();
            let bio = r.bio_at_k.map(|v| format!("{v:.6}")).unwrap_or_default();
            let absorb = r.sink_absorption.map(|v| format!("{v:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{acc},{bio},{:.6},{:.6},{absorb}\n",
                r.config, r.collapse_rate, r.sink_consistency
            ));
        }
        out
    }

    pub fn row(&self, config: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }
}

/// Train and evaluate the three configurations on identical data and seeds.
/// Metrics are computed over the provided samples with the faithful cube.
pub fn run_ablation(
    samples: &[Sample],
    setup: &FitSetup,
    cfg: &TrainConfig,
    k: usize,
) -> Result<AblationTable, AblationError> {
    let arms: [(&'static str, bool, f64); 3] = [
        (ARM_NO_SINK, false, 0.0),
        (ARM_SINK_NO_LOSS, true, 0.0),
        (ARM_FULL, true, cfg.lambda),
    ];
    let mut rows = Vec::with_capacity(3);
    for (name, use_sink, lambda) in arms {
        let arm_setup = FitSetup {
            backbone: setup.backbone.clone(),
            partition: setup.partition.clone(),
            patch_size: setup.patch_size,
            use_sink,
            classes: setup.classes,
        };
        let arm_cfg = TrainConfig { lambda, ..cfg.clone() };
        let outcome = fit(samples, &arm_setup, &arm_cfg)
            .map_err(|source| AblationError::Train { arm: name, source })?;
        let report = eval::evaluate(
            &outcome.model,
            &outcome.parts,
            samples,
            CubeMode::Faithful,
            k,
            cfg.task,
        )
        .map_err(|source| AblationError::Eval { arm: name, source })?;
        let absorption = eval::mean_aux_sink_rate(&outcome.model, &outcome.parts, samples, cfg.task)
            .map_err(|source| AblationError::Eval { arm: name, source })?;
        rows.push(AblationRow {
            config: name,
            accuracy: report.accuracy,
            bio_at_k: report.mean_bio_at_k,
            collapse_rate: report.mean_collapse_rate,
            sink_consistency: report.mean_sink_consistency,
            sink_absorption: absorption,
        });
    }
    Ok(AblationTable { rows })
}
