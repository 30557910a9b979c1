//! Evaluation metrics against planted ground truth: accuracy, band-level
//! IoU over the top-k wavelengths, spatial IoU against lesion masks, and
//! area under the precision-recall curve, plus the report orchestration that
//! runs the whole suite over a dataset.

use crate::hsi::{Mask, Sample};
use crate::model::{FocusModel, ModelError};
use crate::saliency::{
    self, build_cube, per_layer_heatmaps, spatial_heatmap, spectral_curve, CubeMode,
    SaliencyError, SpatialHeatmap, SpectralCurve,
};
use crate::sink::{self, HeadPartition, HeadScope, SinkError};
use crate::train::TaskKind;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("k = {k} exceeds band count {bands}")]
    KTooLarge { k: usize, bands: usize },
    #[error("no ground-truth bands")]
    NoTrueBands,
    #[error("mask must contain at least one positive and one negative cell")]
    DegenerateMask,
    #[error("mask {mh}x{mw} incompatible with grid {gh}x{gw}")]
    MaskGridMismatch { mh: usize, mw: usize, gh: usize, gw: usize },
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("saliency error: {0}")]
    Saliency(#[from] SaliencyError),
    #[error("sink error: {0}")]
    Sink(#[from] SinkError),
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Indices of the k largest curve values; ties break toward the lower band.
pub fn top_k_bands(curve: &SpectralCurve, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..curve.len()).collect();
    order.sort_by(|&a, &b| curve.values()[b].total_cmp(&curve.values()[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Band-level IoU of the top-k predicted bands against the planted set.
/// A planted set larger than k is truncated to its k lowest band indices
/// (planted contrasts are equal, so the index tie-break applies).
pub fn bio_at_k(
    curve: &SpectralCurve,
    true_bands: &[usize],
    k: usize,
) -> Result<f64, EvalError> {
    if k > curve.len() {
        return Err(EvalError::KTooLarge { k, bands: curve.len() });
    }
    if true_bands.is_empty() {
        return Err(EvalError::NoTrueBands);
    }
    let predicted = top_k_bands(curve, k);
    let mut truth: Vec<usize> = true_bands.to_vec();
    truth.sort_unstable();
    truth.dedup();
    truth.truncate(k);
    let inter = predicted.iter().filter(|b| truth.contains(b)).count();
    let union = predicted.len() + truth.len() - inter;
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouOutcome {
    pub value: f64,
    /// The heatmap was constant, so no binarization threshold exists.
    pub degenerate: bool,
}

/// Block-downscale a pixel mask to the patch grid: a cell is positive when
/// at least half of its pixels are.
pub fn downscale_mask(mask: &Mask, grid_h: usize, grid_w: usize) -> Result<Mask, EvalError> {
    if mask.height() == grid_h && mask.width() == grid_w {
        return Ok(mask.clone());
    }
    if grid_h == 0
        || grid_w == 0
        || mask.height() % grid_h != 0
        || mask.width() % grid_w != 0
    {
        return Err(EvalError::MaskGridMismatch {
            mh: mask.height(),
            mw: mask.width(),
            gh: grid_h,
            gw: grid_w,
        });
    }
    let (bh, bw) = (mask.height() / grid_h, mask.width() / grid_w);
    let mut out = Mask::filled(grid_h, grid_w, false);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let mut ones = 0;
            for y in 0..bh {
                for x in 0..bw {
                    if mask.at(gy * bh + y, gx * bw + x) {
                        ones += 1;
                    }
                }
            }
            out.set(gy, gx, 2 * ones >= bh * bw);
        }
    }
    Ok(out)
}

/// IoU between the heatmap binarized at 0.5 (after min-max normalization)
/// and the mask. The mask may be at pixel resolution (downscaled here) or
/// already on the grid.
pub fn spatial_iou(heatmap: &SpatialHeatmap, mask: &Mask) -> Result<IouOutcome, EvalError> {
    let grid = downscale_mask(mask, heatmap.grid_h(), heatmap.grid_w())?;
    let lo = heatmap.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = heatmap.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(IouOutcome { value: 0.0, degenerate: true });
    }
    let span = hi - lo;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (v, &m) in heatmap.values().iter().zip(grid.data()) {
        let p = (v - lo) / span >= 0.5;
        if p && m {
            inter += 1;
        }
        if p || m {
            union += 1;
        }
    }
    let value = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(IouOutcome { value, degenerate: false })
}

/// Area under the precision-recall curve by step-wise interpolation
/// (precision held to the right): thresholds descend over the unique score
/// values with ties grouped.
pub fn auprc(scores: &[f64], mask: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != mask.len() {
        return Err(EvalError::LengthMismatch(scores.len(), mask.len()));
    }
    let positives = mask.iter().filter(|m| **m).count();
    if positives == 0 || positives == mask.len() {
        return Err(EvalError::DegenerateMask);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // Take the whole tie group at once.
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if mask[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

#[derive(Debug, Clone)]
pub struct SampleEval {
    pub index: usize,
    pub label: Option<usize>,
    pub predicted: Option<usize>,
    /// None for lesion-free samples (nothing planted to recover).
    pub bio_at_k: Option<f64>,
    pub spatial_iou: Option<f64>,
    pub iou_degenerate: bool,
    pub auprc: Option<f64>,
    pub sink_rate: Option<f64>,
    pub collapse_rate: f64,
    pub sink_consistency: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: Option<f64>,
    /// Means over the samples that carry planted ground truth.
    pub mean_bio_at_k: Option<f64>,
    pub mean_spatial_iou: Option<f64>,
    pub mean_auprc: Option<f64>,
    pub mean_sink_rate: Option<f64>,
    pub mean_collapse_rate: f64,
    pub mean_sink_consistency: f64,
    pub per_sample: Vec<SampleEval>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "sample,label,predicted,bio_at_k,spatial_iou,auprc,sink_rate,collapse_rate,sink_consistency\n",
        );
        let fmt_opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let fmt_opt_f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for s in &self.per_sample {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6},{:.6}\n",
                s.index,
                fmt_opt_u(s.label),
                fmt_opt_u(s.predicted),
                fmt_opt_f(s.bio_at_k),
                fmt_opt_f(s.spatial_iou),
                fmt_opt_f(s.auprc),
                fmt_opt_f(s.sink_rate),
                s.collapse_rate,
                s.sink_consistency,
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        out.push_str(&format!("samples:          {}\n", self.per_sample.len()));
        out.push_str(&format!("accuracy:         {}\n", fmt_opt(self.accuracy)));
        out.push_str(&format!("mean BIO@k:       {}\n", fmt_opt(self.mean_bio_at_k)));
        out.push_str(&format!("mean spatial IoU: {}\n", fmt_opt(self.mean_spatial_iou)));
        out.push_str(&format!("mean AUPRC:       {}\n", fmt_opt(self.mean_auprc)));
        out.push_str(&format!("mean sink rate:   {}\n", fmt_opt(self.mean_sink_rate)));
        out.push_str(&format!("mean collapse:    {:.4}\n", self.mean_collapse_rate));
        out.push_str(&format!("sink consistency: {:.4}\n", self.mean_sink_consistency));
        out
    }
}

/// Deterministic 80/20-style split: seeded shuffle, first `train_fraction`
/// of the indices train, the rest hold out.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    crate::rng::SplitMix64::new(seed ^ 0x5b11_7e5e_ed00_91af).shuffle(&mut order);
    let cut = ((n as f64) * train_fraction).round() as usize;
    let cut = cut.min(n);
    let (train, held) = order.split_at(cut);
    (train.to_vec(), held.to_vec())
}

/// Run the complete metric suite over a dataset. Explanations are extracted
/// for each sample's labeled class (class 0 in regression mode), entirely
/// gradient-free.
pub fn evaluate(
    model: &FocusModel,
    parts: &HeadPartition,
    samples: &[Sample],
    mode: CubeMode,
    k: usize,
    task: TaskKind,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let per_sample = crate::parallel::parallel_map(samples, |index, sample| {
        evaluate_sample(model, parts, sample, index, mode, k, task)
    })
    .into_iter()
    .collect::<Result<Vec<SampleEval>, EvalError>>()?;

    let n = per_sample.len() as f64;
    let accuracy = match task {
        TaskKind::Classification => {
            let preds: Vec<usize> = per_sample.iter().filter_map(|s| s.predicted).collect();
            let labels: Vec<usize> = per_sample.iter().filter_map(|s| s.label).collect();
            Some(accuracy(&preds, &labels)?)
        }
        TaskKind::Regression => None,
    };
    let mean = |f: &dyn Fn(&SampleEval) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&SampleEval) -> Option<f64>| {
        let values: Vec<f64> = per_sample.iter().filter_map(f).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    Ok(EvalReport {
        accuracy,
        mean_bio_at_k: mean_opt(&|s| s.bio_at_k),
        mean_spatial_iou: mean_opt(&|s| s.spatial_iou),
        mean_auprc: mean_opt(&|s| s.auprc),
        mean_sink_rate: mean_opt(&|s| s.sink_rate),
        mean_collapse_rate: mean(&|s| s.collapse_rate),
        mean_sink_consistency: mean(&|s| s.sink_consistency),
        per_sample,
    })
}

fn evaluate_sample(
    model: &FocusModel,
    parts: &HeadPartition,
    sample: &Sample,
    index: usize,
    mode: CubeMode,
    k: usize,
    task: TaskKind,
) -> Result<SampleEval, EvalError> {
    let (label, predicted, explain_class) = match task {
        TaskKind::Classification => {
            let label = sample.label.class().ok_or(EvalError::EmptyInput)?;
            let (pred, _) = model.classify(&sample.cube)?;
            (Some(label), Some(pred), label)
        }
        TaskKind::Regression => (None, None, 0),
    };
    let fwd = model.forward_class(&sample.cube, explain_class)?;
    let adapter = Some(&model.params.adapter);
    let cube = build_cube(
        &fwd.attention,
        parts,
        &fwd.layout,
        model.partition(),
        mode,
        adapter,
        explain_class,
    )?;
    let heat = spatial_heatmap(&cube);
    let curve = spectral_curve(&cube);
    let (bio, iou, auprc_value) = if sample.has_lesion() {
        let bio = bio_at_k(&curve, &sample.true_bands, k)?;
        let iou = spatial_iou(&heat, &sample.lesion_mask)?;
        let grid_mask = downscale_mask(&sample.lesion_mask, heat.grid_h(), heat.grid_w())?;
        let auprc_value = match auprc(heat.values(), grid_mask.data()) {
            Ok(v) => Some(v),
            Err(EvalError::DegenerateMask) => None,
            Err(e) => return Err(e),
        };
        (Some(bio), Some(iou), auprc_value)
    } else {
        (None, None, None)
    };
    let layer_heats = per_layer_heatmaps(
        &fwd.attention,
        parts,
        &fwd.layout,
        model.partition(),
        mode,
        adapter,
        explain_class,
    )?;
    let heat_values: Vec<&[f64]> = layer_heats.iter().map(|h| h.values()).collect();
    let consistency = sink::sink_consistency(&heat_values)?;
    Ok(SampleEval {
        index,
        label,
        predicted,
        bio_at_k: bio,
        spatial_iou: iou.map(|o| o.value),
        iou_degenerate: iou.map(|o| o.degenerate).unwrap_or(false),
        auprc: auprc_value,
        sink_rate: sink::sink_rate(&fwd.attention, HeadScope::All),
        collapse_rate: sink::collapse_rate(&fwd.attention),
        sink_consistency: consistency.value,
    })
}

/// Mean aux-head sink rate over a dataset's labeled-class forwards
/// (the ablation readout for the attraction loss).
pub fn mean_aux_sink_rate(
    model: &FocusModel,
    parts: &HeadPartition,
    samples: &[Sample],
    task: TaskKind,
) -> Result<Option<f64>, EvalError> {
    let rates = crate::parallel::parallel_map(samples, |_, sample| {
        let class = match task {
            TaskKind::Classification => sample.label.class().unwrap_or(0),
            TaskKind::Regression => 0,
        };
        let fwd = model.forward_class(&sample.cube, class)?;
        Ok::<_, EvalError>(sink::sink_rate(&fwd.attention, HeadScope::AuxOnly(parts)))
    })
    .into_iter()
    .collect::<Result<Vec<Option<f64>>, EvalError>>()?;
    let present: Vec<f64> = rates.into_iter().flatten().collect();
    Ok((!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64))
}

/// Spectral curve and heatmap of one sample's labeled class, for ablation
/// summaries.
pub fn explain_sample(
    model: &FocusModel,
    parts: &HeadPartition,
    sample: &Sample,
    mode: CubeMode,
    class: usize,
) -> Result<(saliency::SaliencyCube, SpatialHeatmap, SpectralCurve), EvalError> {
    let fwd = model.forward_class(&sample.cube, class)?;
    let cube = build_cube(
        &fwd.attention,
        parts,
        &fwd.layout,
        model.partition(),
        mode,
        Some(&model.params.adapter),
        class,
    )?;
    let heat = spatial_heatmap(&cube);
    let curve = spectral_curve(&cube);
    Ok((cube, heat, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn curve(values: Vec<f64>) -> SpectralCurve {
        // SpectralCurve has no public constructor; go through a cube.
        // Test-only shim: build via max over a 1x1 grid.
        let bands = values.len();
        let partition = crate::hsi::BandPartition::single(bands);
        let cube = crate::saliency::test_support::cube_from_values(values, 1, 1, bands, partition);
        spectral_curve(&cube)
    }

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
        // Permutation invariance.
        assert_eq!(
            accuracy(&[0, 1, 2, 0], &[0, 1, 0, 0]).unwrap(),
            accuracy(&[0, 0, 1, 2], &[0, 0, 1, 0]).unwrap()
        );
    }

    #[test]
    fn bio_at_k_set_arithmetic() {
        // Perfect overlap.
        let c = curve(vec![9.0, 8.0, 7.0, 6.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(bio_at_k(&c, &[0, 1, 2, 3, 4], 5).unwrap(), 1.0);
        // Disjoint.
        assert_eq!(bio_at_k(&c, &[5, 6, 7, 8, 9], 5).unwrap(), 0.0);
        // {0..4} vs {2..6}: intersection 3, union 7.
        let v = bio_at_k(&c, &[2, 3, 4, 5, 6], 5).unwrap();
        assert!((v - 3.0 / 7.0).abs() < 1e-12);
        assert!(bio_at_k(&c, &[], 5).is_err());
        assert!(bio_at_k(&c, &[0], 11).is_err());
    }

    #[test]
    fn bio_ties_break_toward_lower_band() {
        // All equal values: top-5 must be bands 0..5.
        let c = curve(vec![0.3; 10]);
        assert_eq!(top_k_bands(&c, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(bio_at_k(&c, &[0, 1, 2, 3, 4], 5).unwrap(), 1.0);
        // Oversized planted set truncates to its lowest band indices.
        let v = bio_at_k(&c, &[0, 1, 2, 3, 4, 5, 6], 5).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn bio_invariant_under_monotone_transforms() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let values: Vec<f64> = (0..12).map(|_| rng.next_f64()).collect();
            let transformed: Vec<f64> = values.iter().map(|v| (3.0 * v + 1.0).exp()).collect();
            let truth: Vec<usize> = (0..12).filter(|_| rng.next_f64() < 0.4).collect();
            if truth.is_empty() {
                continue;
            }
            let a = bio_at_k(&curve(values), &truth, 5).unwrap();
            let b = bio_at_k(&curve(transformed), &truth, 5).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn downscale_majority_rule() {
        // 4x4 mask to 2x2 grid: top-left block 3/4 positive, top-right 1/4,
        // bottom-left 2/4, bottom-right 0/4.
        let data = vec![
            true, true, false, false, //
            true, false, true, false, //
            true, false, false, false, //
            true, false, false, false,
        ];
        let mask = Mask::new(4, 4, data).unwrap();
        let grid = downscale_mask(&mask, 2, 2).unwrap();
        assert!(grid.at(0, 0)); // 3/4
        assert!(!grid.at(0, 1)); // 1/4
        assert!(grid.at(1, 0)); // 2/4, exactly half counts as positive
        assert!(!grid.at(1, 1));
        assert!(downscale_mask(&mask, 3, 2).is_err());
    }

    #[test]
    fn spatial_iou_contracts() {
        // Heatmap equal to the mask: IoU 1.
        let mask = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
        let heat = SpatialHeatmap::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let out = spatial_iou(&heat, &mask).unwrap();
        assert_eq!(out.value, 1.0);
        assert!(!out.degenerate);
        // Disjoint prediction.
        let heat = SpatialHeatmap::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(spatial_iou(&heat, &mask).unwrap().value, 0.0);
        // Constant heatmap is flagged.
        let heat = SpatialHeatmap::new(2, 2, vec![0.4; 4]);
        let out = spatial_iou(&heat, &mask).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.degenerate);
    }

    #[test]
    fn spatial_iou_robust_to_small_noise() {
        // mask + uniform noise under a quarter of the contrast still
        // binarizes to the mask.
        let mut rng = SplitMix64::new(8);
        let mask_data: Vec<bool> = (0..64).map(|_| rng.next_f64() < 0.3).collect();
        let mask = Mask::new(8, 8, mask_data.clone()).unwrap();
        let heat_values: Vec<f64> = mask_data
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 } + rng.range_f64(0.0, 0.24))
            .collect();
        let heat = SpatialHeatmap::new(8, 8, heat_values);
        assert_eq!(spatial_iou(&heat, &mask).unwrap().value, 1.0);
    }

    #[test]
    fn spatial_iou_invariant_under_joint_permutation() {
        let mut rng = SplitMix64::new(9);
        let mask_data: Vec<bool> = (0..16).map(|_| rng.next_f64() < 0.4).collect();
        let values: Vec<f64> = (0..16).map(|_| rng.next_f64()).collect();
        let mut perm: Vec<usize> = (0..16).collect();
        rng.shuffle(&mut perm);
        let mask_p: Vec<bool> = perm.iter().map(|&i| mask_data[i]).collect();
        let values_p: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        let a = spatial_iou(
            &SpatialHeatmap::new(4, 4, values),
            &Mask::new(4, 4, mask_data).unwrap(),
        )
        .unwrap();
        let b = spatial_iou(
            &SpatialHeatmap::new(4, 4, values_p),
            &Mask::new(4, 4, mask_p).unwrap(),
        )
        .unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn auprc_contracts() {
        // Perfect separation.
        let scores = vec![0.9, 0.8, 0.2, 0.1];
        let mask = vec![true, true, false, false];
        assert!((auprc(&scores, &mask).unwrap() - 1.0).abs() < 1e-12);
        // Constant scores: one PR point at recall 1, precision = prevalence.
        let scores = vec![0.5; 10];
        let mask: Vec<bool> = (0..10).map(|i| i < 2).collect();
        assert!((auprc(&scores, &mask).unwrap() - 0.2).abs() < 1e-12);
        // Degenerate masks are errors.
        assert!(matches!(
            auprc(&[1.0, 0.5], &[true, true]),
            Err(EvalError::DegenerateMask)
        ));
        assert!(matches!(
            auprc(&[1.0, 0.5], &[false, false]),
            Err(EvalError::DegenerateMask)
        ));
    }

    #[test]
    fn auprc_random_scores_approach_prevalence() {
        let mut rng = SplitMix64::new(12);
        let n = 256;
        let prevalence = 0.2;
        let mut total = 0.0;
        let trials = 100;
        for _ in 0..trials {
            let mask: Vec<bool> = (0..n).map(|_| rng.next_f64() < prevalence).collect();
            if mask.iter().all(|&m| m) || mask.iter().all(|&m| !m) {
                continue;
            }
            let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            total += auprc(&scores, &mask).unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - prevalence).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn auprc_invariant_under_monotone_transform() {
        let mut rng = SplitMix64::new(14);
        let scores: Vec<f64> = (0..32).map(|_| rng.next_f64()).collect();
        let mask: Vec<bool> = (0..32).map(|i| i % 3 == 0).collect();
        let squashed: Vec<f64> = scores.iter().map(|v| v.tanh() * 10.0 - 2.0).collect();
        let a = auprc(&scores, &mask).unwrap();
        let b = auprc(&squashed, &mask).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    /// Brute-force AUPRC: enumerate every distinct threshold explicitly and
    /// integrate the step function by hand.
    fn auprc_brute(scores: &[f64], mask: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let positives = mask.iter().filter(|m| **m).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (s, &m) in scores.iter().zip(mask) {
                if *s >= t {
                    if m {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / positives;
            let precision = tp / (tp + fp);
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn auprc_matches_brute_force_with_ties() {
        let mut rng = SplitMix64::new(20);
        for trial in 0..50 {
            let n = 9;
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 4.0).floor() / 4.0).collect();
            let mask: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
            let pos = mask.iter().filter(|m| **m).count();
            if pos == 0 || pos == n {
                continue;
            }
            let fast = auprc(&scores, &mask).unwrap();
            let brute = auprc_brute(&scores, &mask);
            assert!((fast - brute).abs() < 1e-12, "trial {trial}: {fast} vs {brute}");
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a_train, a_test) = split_indices(20, 0.8, 3);
        let (b_train, b_test) = split_indices(20, 0.8, 3);
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        assert_eq!(a_train.len(), 16);
        assert_eq!(a_test.len(), 4);
        let mut all: Vec<usize> = a_train.iter().chain(&a_test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        let (c_train, _) = split_indices(20, 0.8, 4);
        assert_ne!(a_train, c_train);
    }
}
