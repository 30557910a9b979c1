//! The FOCUS mechanism on top of the frozen backbone.
//!
//! A hyperspectral cube is pooled into patch tokens, one token per spatial
//! cell *per spectral group*, embedded through the per-band adapter. The
//! sequence fed to the encoder is `[sink, prompts of one class, patch
//! tokens]` under a group-restricted attention mask: prompt g sees only the
//! sink, itself, and the patch tokens of group g; patch tokens see the sink
//! and each other but never the prompts, so the patch representation is
//! identical across the per-class passes and prompts act purely as probes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::backbone::{detach_attention, AttentionRecord, FrozenBackbone};
use crate::hsi::{BandPartition, HsiCube};
use crate::numerics::tape::{Graph, Mode, ValueId};
use crate::numerics::tensor::{BoolMask, Tensor};
use crate::numerics::NumericsError;
use crate::rng::SplitMix64;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("band count mismatch: model expects {expected}, cube has {found}")]
    BandMismatch { expected: usize, found: usize },
    #[error("spatial size {h}x{w} not divisible by patch size {patch}")]
    PatchMismatch { h: usize, w: usize, patch: usize },
    #[error("bad magic: expected FPM1, found {0:?}")]
    BadMagic(String),
    #[error("truncated params file: {0}")]
    Truncated(String),
    #[error("numeric failure: {0}")]
    Numerics(#[from] NumericsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

// Small relative to the adapter output, so attention is driven by spectral
// content rather than by where a patch sits.
const POS_EMBED_SCALE: f64 = 0.05;
const GROUP_EMBED_SCALE: f64 = 0.05;
const GROUP_EMBED_SEED: u64 = 0x5eed_0f0c;

/// Per-band embedding matrix (C x d), applied before patchification.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAdapter {
    pub phi: Tensor,
}

/// One trainable token per (class, group) pair, stored as a (K*G) x d matrix
/// with class-major rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    prompts: Tensor,
    classes: usize,
    groups: usize,
}

impl PromptBank {
    pub fn new(prompts: Tensor, classes: usize, groups: usize) -> Result<PromptBank, ModelError> {
        if prompts.rows() != classes * groups {
            return Err(ModelError::Invalid(format!(
                "prompt bank has {} rows for {classes} classes x {groups} groups",
                prompts.rows()
            )));
        }
        Ok(PromptBank { prompts, classes, groups })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.prompts
    }

    pub fn matrix_mut(&mut self) -> &mut Tensor {
        &mut self.prompts
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn row_of(&self, class: usize, group: usize) -> usize {
        class * self.groups + group
    }

    pub fn token(&self, class: usize, group: usize) -> &[f64] {
        self.prompts.row_slice(self.row_of(class, group))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkToken {
    pub s: Tensor,
}

/// Shared d-vector readout plus per-class bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub w: Tensor,
    pub b: Tensor,
}

/// The full trainable set: adapter, prompt bank, sink token, readout.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusParams {
    pub adapter: SpectralAdapter,
    pub prompts: PromptBank,
    pub sink: SinkToken,
    pub readout: Readout,
}

pub const PARAM_NAMES: [&str; 5] = ["adapter_phi", "prompts", "sink", "readout_w", "readout_b"];

impl FocusParams {
    /// Seeded init: prompts and sink from N(0, 0.02), adapter from
    /// N(0, 1/sqrt(C)), readout zero so initial logits are class-symmetric.
    pub fn init(classes: usize, groups: usize, bands: usize, dim: usize, seed: u64) -> FocusParams {
        let mut rng = SplitMix64::new(seed);
        let phi_std = 1.0 / (bands as f64).sqrt();
        let draw = |rows: usize, cols: usize, std: f64, rng: &mut SplitMix64| {
            Tensor::from_vec(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.normal(std)).collect(),
            )
            .expect("finite init")
        };
        FocusParams {
            adapter: SpectralAdapter { phi: draw(bands, dim, phi_std, &mut rng) },
            prompts: PromptBank {
                prompts: draw(classes * groups, dim, 0.02, &mut rng),
                classes,
                groups,
            },
            sink: SinkToken { s: draw(1, dim, 0.02, &mut rng) },
            readout: Readout { w: Tensor::zeros(vec![1, dim]), b: Tensor::zeros(vec![classes, 1]) },
        }
    }

    pub fn classes(&self) -> usize {
        self.prompts.classes
    }

    pub fn groups(&self) -> usize {
        self.prompts.groups
    }

    pub fn bands(&self) -> usize {
        self.adapter.phi.rows()
    }

    pub fn dim(&self) -> usize {
        self.adapter.phi.cols()
    }

    /// All trainable tensors in canonical order (matches [`PARAM_NAMES`]).
    pub fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.adapter.phi,
            &self.prompts.prompts,
            &self.sink.s,
            &self.readout.w,
            &self.readout.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.adapter.phi,
            &mut self.prompts.prompts,
            &mut self.sink.s,
            &mut self.readout.w,
            &mut self.readout.b,
        ]
    }

    /// Number of trainable scalars, by direct enumeration.
    pub fn trainable_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    // ---- persistence (FPM1) --------------------------------------------

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"FPM1")?;
        for v in [self.classes(), self.groups(), self.bands(), self.dim()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for t in self.tensors() {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FocusParams, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_or_truncated(&mut r, &mut magic, "magic")?;
        if &magic != b"FPM1" {
            return Err(ModelError::BadMagic(String::from_utf8_lossy(&magic).into_owned()));
        }
        let mut header = [0usize; 4];
        for h in header.iter_mut() {
            let mut buf = [0u8; 4];
            read_or_truncated(&mut r, &mut buf, "header")?;
            *h = u32::from_le_bytes(buf) as usize;
        }
        let [classes, groups, bands, dim] = header;
        if classes == 0 || groups == 0 || bands == 0 || dim == 0 {
            return Err(ModelError::Invalid("zero dimension in FPM1 header".into()));
        }
        let mut read_tensor = |rows: usize, cols: usize| -> Result<Tensor, ModelError> {
            let mut bytes = vec![0u8; 4 * rows * cols];
            read_or_truncated(&mut r, &mut bytes, "params")?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            Tensor::from_vec(vec![rows, cols], data).map_err(ModelError::from)
        };
        Ok(FocusParams {
            adapter: SpectralAdapter { phi: read_tensor(bands, dim)? },
            prompts: PromptBank { prompts: read_tensor(classes * groups, dim)?, classes, groups },
            sink: SinkToken { s: read_tensor(1, dim)? },
            readout: Readout { w: read_tensor(1, dim)?, b: read_tensor(classes, 1)? },
        })
    }
}

fn read_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelError::Truncated(what.to_string())
        } else {
            ModelError::Io(e)
        }
    })
}

/// Index map for one assembled sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub groups: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub use_sink: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Sink,
    Prompt { group: usize },
    Patch { x: usize, y: usize, group: usize },
}

impl TokenLayout {
    pub fn seq_len(&self) -> usize {
        usize::from(self.use_sink) + self.groups + self.patch_token_count()
    }

    pub fn patch_token_count(&self) -> usize {
        self.grid_h * self.grid_w * self.groups
    }

    pub fn sink_index(&self) -> Option<usize> {
        self.use_sink.then_some(0)
    }

    pub fn prompt_index(&self, group: usize) -> usize {
        usize::from(self.use_sink) + group
    }

    pub fn first_patch_index(&self) -> usize {
        usize::from(self.use_sink) + self.groups
    }

    pub fn patch_index(&self, x: usize, y: usize, group: usize) -> usize {
        self.first_patch_index() + (y * self.grid_w + x) * self.groups + group
    }

    pub fn role(&self, token: usize) -> TokenRole {
        let prompt_base = usize::from(self.use_sink);
        if self.use_sink && token == 0 {
            return TokenRole::Sink;
        }
        if token < prompt_base + self.groups {
            return TokenRole::Prompt { group: token - prompt_base };
        }
        let rel = token - self.first_patch_index();
        let group = rel % self.groups;
        let cell = rel / self.groups;
        TokenRole::Patch { x: cell % self.grid_w, y: cell / self.grid_w, group }
    }
}

/// Group-restricted attention mask for an assembled sequence.
pub fn attention_mask(layout: &TokenLayout) -> BoolMask {
    let t = layout.seq_len();
    BoolMask::from_fn(t, t, |q, k| {
        let (qr, kr) = (layout.role(q), layout.role(k));
        match qr {
            TokenRole::Sink => true,
            TokenRole::Prompt { group } => match kr {
                TokenRole::Sink => true,
                TokenRole::Prompt { group: kg } => kg == group,
                TokenRole::Patch { group: kg, .. } => kg == group,
            },
            TokenRole::Patch { .. } => {
                matches!(kr, TokenRole::Sink | TokenRole::Patch { .. })
            }
        }
    })
}

/// Patch pooling of one cube: the constant matrix mapping adapter rows to
/// patch tokens, plus the fixed positional/group embedding rows.
pub struct PooledPatches {
    /// (Hp*Wp*G) x C; row (x,y,g) holds meanpool(x,y,band)/|B_g| on the
    /// bands of group g, zero elsewhere.
    pool: Arc<Tensor>,
    /// (Hp*Wp*G) x d fixed embeddings (sinusoidal position + seeded group).
    fixed: Arc<Tensor>,
    layout: TokenLayout,
}

impl PooledPatches {
    pub fn layout(&self) -> TokenLayout {
        self.layout
    }

    pub fn pool_matrix(&self) -> &Tensor {
        &self.pool
    }

    /// Plain (untaped) patch tokens, optionally without the fixed
    /// embeddings. Mirrors the traced path exactly.
    pub fn tokens(&self, phi: &Tensor, with_embeddings: bool) -> Result<Tensor, NumericsError> {
        let projected = crate::numerics::tensor::matmul(&self.pool, phi)?;
        if with_embeddings {
            crate::numerics::tensor::add(&projected, &self.fixed)
        } else {
            Ok(projected)
        }
    }
}

/// Mean-pool a cube into per-(cell, group) adapter coefficients.
pub fn pool_patches(
    cube: &HsiCube,
    partition: &BandPartition,
    patch_size: usize,
    dim: usize,
    use_sink: bool,
) -> Result<PooledPatches, ModelError> {
    if partition.band_count() != cube.bands() {
        return Err(ModelError::BandMismatch {
            expected: partition.band_count(),
            found: cube.bands(),
        });
    }
    if patch_size == 0 || cube.height() % patch_size != 0 || cube.width() % patch_size != 0 {
        return Err(ModelError::PatchMismatch {
            h: cube.height(),
            w: cube.width(),
            patch: patch_size,
        });
    }
    let grid_h = cube.height() / patch_size;
    let grid_w = cube.width() / patch_size;
    let groups = partition.group_count();
    let layout = TokenLayout { groups, grid_h, grid_w, use_sink };
    let bands = cube.bands();
    let n_tok = layout.patch_token_count();
    let window = (patch_size * patch_size) as f64;

    // meanpool(x, y, band)
    let mut pooled = vec![0.0; grid_h * grid_w * bands];
    for band in 0..bands {
        let plane = cube.band_plane(band);
        for gy in 0..grid_h {
            for gx in 0..grid_w {
                let mut acc = 0.0;
                for dy in 0..patch_size {
                    let row = (gy * patch_size + dy) * cube.width() + gx * patch_size;
                    acc += plane[row..row + patch_size].iter().sum::<f64>();
                }
                pooled[(gy * grid_w + gx) * bands + band] = acc / window;
            }
        }
    }

    let mut pool = vec![0.0; n_tok * bands];
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            for g in 0..groups {
                let row = (gy * grid_w + gx) * groups + g;
                let inv = 1.0 / partition.group_size(g) as f64;
                for band in partition.bands_of(g) {
                    pool[row * bands + band] = pooled[(gy * grid_w + gx) * bands + band] * inv;
                }
            }
        }
    }

    let mut fixed = vec![0.0; n_tok * dim];
    let group_embeds: Vec<Vec<f64>> = (0..groups).map(|g| group_embedding(g, dim)).collect();
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let pos = sinusoidal_position(gx, gy, dim);
            for g in 0..groups {
                let row = (gy * grid_w + gx) * groups + g;
                for c in 0..dim {
                    fixed[row * dim + c] = pos[c] + group_embeds[g][c];
                }
            }
        }
    }

    Ok(PooledPatches {
        pool: Arc::new(Tensor::from_vec(vec![n_tok, bands], pool)?),
        fixed: Arc::new(Tensor::from_vec(vec![n_tok, dim], fixed)?),
        layout,
    })
}

/// Fixed 2-D sinusoidal position embedding: first half of the width encodes
/// x, second half y.
pub fn sinusoidal_position(x: usize, y: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for (i, slot) in out.iter_mut().enumerate() {
        let (coord, j, span) =
            if i < half { (x as f64, i, half) } else { (y as f64, i - half, dim - half) };
        let freq = 1.0 / 10_000f64.powf(2.0 * (j / 2) as f64 / span.max(1) as f64);
        let angle = coord * freq;
        *slot = POS_EMBED_SCALE * if j % 2 == 0 { angle.sin() } else { angle.cos() };
    }
    out
}

/// Fixed random embedding identifying a spectral group (frozen, seeded).
pub fn group_embedding(group: usize, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(GROUP_EMBED_SEED).fork(group as u64 + 1);
    (0..dim).map(|_| rng.normal(GROUP_EMBED_SCALE)).collect()
}

/// Tape handles for the trainable parameters, registered once per graph.
#[derive(Debug, Clone, Copy)]
pub struct TracedParams {
    pub phi: ValueId,
    pub prompts: ValueId,
    pub sink: ValueId,
    pub w: ValueId,
    pub b: ValueId,
}

/// Result of one traced per-class forward.
pub struct TracedClassForward {
    pub logit: ValueId,
    pub attention: Vec<Vec<ValueId>>,
    pub layout: TokenLayout,
}

/// One inference forward: scalar logit plus the detached attention record.
pub struct ClassForward {
    pub logit: f64,
    pub attention: AttentionRecord,
    pub layout: TokenLayout,
}

#[derive(Clone)]
pub struct FocusModel {
    backbone: Arc<FrozenBackbone>,
    pub params: FocusParams,
    partition: BandPartition,
    patch_size: usize,
    use_sink: bool,
}

impl FocusModel {
    pub fn new(
        backbone: Arc<FrozenBackbone>,
        params: FocusParams,
        partition: BandPartition,
        patch_size: usize,
        use_sink: bool,
    ) -> Result<FocusModel, ModelError> {
        if params.dim() != backbone.config().dim {
            return Err(ModelError::Invalid(format!(
                "params dim {} vs backbone dim {}",
                params.dim(),
                backbone.config().dim
            )));
        }
        if params.groups() != partition.group_count() {
            return Err(ModelError::Invalid(format!(
                "params groups {} vs partition groups {}",
                params.groups(),
                partition.group_count()
            )));
        }
        if params.bands() != partition.band_count() {
            return Err(ModelError::Invalid(format!(
                "params bands {} vs partition bands {}",
                params.bands(),
                partition.band_count()
            )));
        }
        if patch_size == 0 {
            return Err(ModelError::Invalid("patch size must be >= 1".into()));
        }
        Ok(FocusModel { backbone, params, partition, patch_size, use_sink })
    }

    pub fn backbone(&self) -> &FrozenBackbone {
        &self.backbone
    }

    pub fn partition(&self) -> &BandPartition {
        &self.partition
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn use_sink(&self) -> bool {
        self.use_sink
    }

    pub fn classes(&self) -> usize {
        self.params.classes()
    }

    pub fn pool(&self, cube: &HsiCube) -> Result<PooledPatches, ModelError> {
        pool_patches(cube, &self.partition, self.patch_size, self.params.dim(), self.use_sink)
    }

    pub fn register_params(&self, graph: &mut Graph) -> TracedParams {
        TracedParams {
            phi: graph.trainable(&self.params.adapter.phi),
            prompts: graph.trainable(self.params.prompts.matrix()),
            sink: graph.trainable(&self.params.sink.s),
            w: graph.trainable(&self.params.readout.w),
            b: graph.trainable(&self.params.readout.b),
        }
    }

    /// Forward for one class on a caller-owned graph. The pooled input and
    /// mask are shared across the per-class passes of one sample.
    pub fn forward_class_traced(
        &self,
        graph: &mut Graph,
        traced: &TracedParams,
        pooled: &PooledPatches,
        mask: &BoolMask,
        class: usize,
    ) -> Result<TracedClassForward, ModelError> {
        let layout = pooled.layout();
        let groups = self.params.groups();

        let pool = graph.frozen_shared(pooled.pool.clone());
        let fixed = graph.frozen_shared(pooled.fixed.clone());
        let projected = graph.matmul(pool, traced.phi)?;
        let patch_tokens = graph.add(projected, fixed)?;

        let prompt_rows = graph.slice_rows(traced.prompts, class * groups, groups)?;
        let seq = if self.use_sink {
            graph.concat_rows(&[traced.sink, prompt_rows, patch_tokens])?
        } else {
            graph.concat_rows(&[prompt_rows, patch_tokens])?
        };

        let encoded = self.backbone.encode_traced(graph, seq, mask)?;
        let prompt_mean =
            graph.mean_rows(encoded.final_states, layout.prompt_index(0), groups)?;
        let score = graph.matmul_nt(prompt_mean, traced.w)?;
        let bias = graph.pick(traced.b, class)?;
        let logit = graph.add(score, bias)?;
        Ok(TracedClassForward { logit, attention: encoded.attention, layout })
    }

    /// Gradient-free forward for one class: no tape is built.
    pub fn forward_class(&self, cube: &HsiCube, class: usize) -> Result<ClassForward, ModelError> {
        let pooled = self.pool(cube)?;
        let mask = attention_mask(&pooled.layout());
        let mut graph = Graph::new(Mode::Inference);
        let traced = self.register_params(&mut graph);
        let fwd = self.forward_class_traced(&mut graph, &traced, &pooled, &mask, class)?;
        assert_eq!(graph.recorded_ops(), 0, "inference must not tape");
        assert_eq!(graph.gradient_buffers(), 0, "inference must not allocate gradients");
        let attention = detach_attention(&graph, &fwd.attention, fwd.layout.sink_index());
        Ok(ClassForward {
            logit: graph.value(fwd.logit).scalar_value(),
            attention,
            layout: fwd.layout,
        })
    }

    /// All class logits for one cube (one forward per class).
    pub fn logits(&self, cube: &HsiCube) -> Result<Vec<f64>, ModelError> {
        (0..self.classes()).map(|c| Ok(self.forward_class(cube, c)?.logit)).collect()
    }

    /// Predicted class: argmax of the per-class logits, ties broken toward
    /// the smaller class index.
    pub fn classify(&self, cube: &HsiCube) -> Result<(usize, Vec<f64>), ModelError> {
        let logits = self.logits(cube)?;
        Ok((argmax_tie_low(&logits), logits))
    }
}

/// Index of the maximum, first occurrence on ties.
pub fn argmax_tie_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
