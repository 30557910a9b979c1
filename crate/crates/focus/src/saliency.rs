//! Gradient-free saliency extraction from recorded attention.
//!
//! The saliency cube reads prompt-to-patch attention of the discriminative
//! heads at the final layer: `T[x, y, band] = mean_{h in star} A[prompt of
//! g(band), patch (x, y, g(band))]`. Summing over bands gives the spatial
//! heatmap, maxing over space gives the spectral curve. Everything here is
//! post-processing over detached records; no tape is ever involved.

use crate::backbone::AttentionRecord;
use crate::hsi::BandPartition;
use crate::model::{SpectralAdapter, TokenLayout};
use crate::sink::HeadPartition;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("no discriminative heads at layer {0}")]
    EmptyDiscriminative(usize),
    #[error("band-weighted mode requires the spectral adapter")]
    MissingAdapter,
    #[error("layout/record mismatch: {0}")]
    Mismatch(String),
}

/// How within-group band values are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeMode {
    /// Attention values copied across the group's bands (group-constant).
    Faithful,
    /// Attention modulated by the adapter row norms inside each group
    /// (max-normalized softmax), restoring within-group variation.
    BandWeighted,
}

/// Nonnegative attention attribution over (x, y, band).
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyCube {
    values: Vec<f64>, // row-major (y, x, band)
    grid_h: usize,
    grid_w: usize,
    bands: usize,
    pub class: usize,
    pub partition: BandPartition,
}

impl SaliencyCube {
    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn at(&self, x: usize, y: usize, band: usize) -> f64 {
        self.values[(y * self.grid_w + x) * self.bands + band]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialHeatmap {
    values: Vec<f64>, // row-major (y, x)
    grid_h: usize,
    grid_w: usize,
}

impl SpatialHeatmap {
    pub fn new(grid_h: usize, grid_w: usize, values: Vec<f64>) -> SpatialHeatmap {
        debug_assert_eq!(values.len(), grid_h * grid_w);
        SpatialHeatmap { values, grid_h, grid_w }
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.grid_w + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    values: Vec<f64>,
}

impl SpectralCurve {
    pub fn from_values(values: Vec<f64>) -> SpectralCurve {
        SpectralCurve { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Saliency cube from the final layer's attention.
pub fn build_cube(
    record: &AttentionRecord,
    parts: &HeadPartition,
    layout: &TokenLayout,
    partition: &BandPartition,
    mode: CubeMode,
    adapter: Option<&SpectralAdapter>,
    class: usize,
) -> Result<SaliencyCube, SaliencyError> {
    build_cube_at_layer(record, record.layer_count() - 1, parts, layout, partition, mode, adapter, class)
}

/// Saliency cube from one specific layer (used for inter-layer consistency).
#[allow(clippy::too_many_arguments)]
pub fn build_cube_at_layer(
    record: &AttentionRecord,
    layer: usize,
    parts: &HeadPartition,
    layout: &TokenLayout,
    partition: &BandPartition,
    mode: CubeMode,
    adapter: Option<&SpectralAdapter>,
    class: usize,
) -> Result<SaliencyCube, SaliencyError> {
    if record.seq_len() != layout.seq_len() {
        return Err(SaliencyError::Mismatch(format!(
            "record seq len {} vs layout {}",
            record.seq_len(),
            layout.seq_len()
        )));
    }
    if partition.group_count() != layout.groups {
        return Err(SaliencyError::Mismatch(format!(
            "partition groups {} vs layout groups {}",
            partition.group_count(),
            layout.groups
        )));
    }
    let star = parts.star(layer);
    if star.is_empty() {
        return Err(SaliencyError::EmptyDiscriminative(layer));
    }
    let band_weights = match mode {
        CubeMode::Faithful => None,
        CubeMode::BandWeighted => {
            Some(adapter_band_weights(adapter.ok_or(SaliencyError::MissingAdapter)?, partition))
        }
    };

    let bands = partition.band_count();
    let mut values = vec![0.0; layout.grid_h * layout.grid_w * bands];
    for y in 0..layout.grid_h {
        for x in 0..layout.grid_w {
            for g in 0..layout.groups {
                let q = layout.prompt_index(g);
                let k = layout.patch_index(x, y, g);
                let mean = star
                    .iter()
                    .map(|&h| record.head(layer, h).at(q, k))
                    .sum::<f64>()
                    / star.len() as f64;
                for band in partition.bands_of(g) {
                    let w = band_weights.as_ref().map_or(1.0, |bw| bw[band]);
                    values[(y * layout.grid_w + x) * bands + band] = mean * w;
                }
            }
        }
    }
    Ok(SaliencyCube {
        values,
        grid_h: layout.grid_h,
        grid_w: layout.grid_w,
        bands,
        class,
        partition: partition.clone(),
    })
}

/// Within-group band weights from adapter row norms: softmax over the group,
/// scaled so the largest weight is exactly 1. Equal norms give weight 1 for
/// every band, which reduces band-weighted mode to faithful mode and keeps
/// cube values attention-bounded in [0, 1].
fn adapter_band_weights(adapter: &SpectralAdapter, partition: &BandPartition) -> Vec<f64> {
    let phi = &adapter.phi;
    let norms: Vec<f64> = (0..phi.rows())
        .map(|r| phi.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut weights = vec![1.0; phi.rows()];
    for g in 0..partition.group_count() {
        let span: Vec<usize> = partition.bands_of(g).collect();
        let max_norm = span.iter().map(|&b| norms[b]).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = span.iter().map(|&b| (norms[b] - max_norm).exp()).collect();
        let peak = exps.iter().cloned().fold(0.0f64, f64::max);
        for (i, &b) in span.iter().enumerate() {
            weights[b] = exps[i] / peak;
        }
    }
    weights
}

/// Band-summed spatial attribution.
pub fn spatial_heatmap(cube: &SaliencyCube) -> SpatialHeatmap {
    let mut values = vec![0.0; cube.grid_h * cube.grid_w];
    for (cell, v) in values.iter_mut().enumerate() {
        let base = cell * cube.bands;
        *v = cube.values[base..base + cube.bands].iter().sum();
    }
    SpatialHeatmap { values, grid_h: cube.grid_h, grid_w: cube.grid_w }
}

/// Spatially-maxed spectral attribution.
pub fn spectral_curve(cube: &SaliencyCube) -> SpectralCurve {
    let mut values = vec![f64::NEG_INFINITY; cube.bands];
    for cell in 0..cube.grid_h * cube.grid_w {
        let base = cell * cube.bands;
        for (band, v) in values.iter_mut().enumerate() {
            *v = v.max(cube.values[base + band]);
        }
    }
    SpectralCurve { values }
}

/// Spatial heatmaps of every layer, for the inter-layer consistency metric.
#[allow(clippy::too_many_arguments)]
pub fn per_layer_heatmaps(
    record: &AttentionRecord,
    parts: &HeadPartition,
    layout: &TokenLayout,
    partition: &BandPartition,
    mode: CubeMode,
    adapter: Option<&SpectralAdapter>,
    class: usize,
) -> Result<Vec<SpatialHeatmap>, SaliencyError> {
    (0..record.layer_count())
        .map(|layer| {
            let cube =
                build_cube_at_layer(record, layer, parts, layout, partition, mode, adapter, class)?;
            Ok(spatial_heatmap(&cube))
        })
        .collect()
}

/// Attention-rollout comparison baseline: per layer average the heads, add
/// the identity (residual path), renormalize rows, chain the matrices across
/// layers, then read the prompt rows' mass onto patch tokens, summed over
/// groups per cell.
pub fn attention_rollout(
    record: &AttentionRecord,
    layout: &TokenLayout,
) -> Result<SpatialHeatmap, SaliencyError> {
    if record.seq_len() != layout.seq_len() {
        return Err(SaliencyError::Mismatch(format!(
            "record seq len {} vs layout {}",
            record.seq_len(),
            layout.seq_len()
        )));
    }
    let t = record.seq_len();
    let heads = record.head_count();
    let mut rolled: Option<Vec<f64>> = None;
    for layer in 0..record.layer_count() {
        // Head-averaged attention + identity, rows renormalized.
        let mut avg = vec![0.0; t * t];
        for h in 0..heads {
            let a = record.head(layer, h);
            for (dst, src) in avg.iter_mut().zip(a.data()) {
                *dst += src / heads as f64;
            }
        }
        for i in 0..t {
            avg[i * t + i] += 1.0;
        }
        for row in avg.chunks_mut(t) {
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        rolled = Some(match rolled {
            None => avg,
            Some(prev) => {
                // rolled = avg @ prev
                let mut next = vec![0.0; t * t];
                for i in 0..t {
                    for k in 0..t {
                        let a = avg[i * t + k];
                        if a == 0.0 {
                            continue;
                        }
                        for j in 0..t {
                            next[i * t + j] += a * prev[k * t + j];
                        }
                    }
                }
                next
            }
        });
    }
    let rolled = rolled.expect("record has >= 1 layer");

    let mut values = vec![0.0; layout.grid_h * layout.grid_w];
    for y in 0..layout.grid_h {
        for x in 0..layout.grid_w {
            let mut acc = 0.0;
            for g_row in 0..layout.groups {
                let q = layout.prompt_index(g_row);
                for g_col in 0..layout.groups {
                    acc += rolled[q * t + layout.patch_index(x, y, g_col)];
                }
            }
            values[y * layout.grid_w + x] = acc;
        }
    }
    Ok(SpatialHeatmap { values, grid_h: layout.grid_h, grid_w: layout.grid_w })
}

/// Row sums of the rolled-up matrix (each must be 1): exposed for tests.
pub fn rollout_row_sums(record: &AttentionRecord) -> Vec<f64> {
    let t = record.seq_len();
    let heads = record.head_count();
    let mut rolled: Option<Vec<f64>> = None;
    for layer in 0..record.layer_count() {
        let mut avg = vec![0.0; t * t];
        for h in 0..heads {
            let a = record.head(layer, h);
            for (dst, src) in avg.iter_mut().zip(a.data()) {
                *dst += src / heads as f64;
            }
        }
        for i in 0..t {
            avg[i * t + i] += 1.0;
        }
        for row in avg.chunks_mut(t) {
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        rolled = Some(match rolled {
            None => avg,
            Some(prev) => {
                let mut next = vec![0.0; t * t];
                for i in 0..t {
                    for k in 0..t {
                        let a = avg[i * t + k];
                        for j in 0..t {
                            next[i * t + j] += a * prev[k * t + j];
                        }
                    }
                }
                next
            }
        });
    }
    rolled.unwrap().chunks(t).map(|row| row.iter().sum()).collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::SaliencyCube;
    use crate::hsi::BandPartition;

    pub fn cube_from_values(
        values: Vec<f64>,
        grid_h: usize,
        grid_w: usize,
        bands: usize,
        partition: BandPartition,
    ) -> SaliencyCube {
        SaliencyCube { values, grid_h, grid_w, bands, class: 0, partition }
    }
}
