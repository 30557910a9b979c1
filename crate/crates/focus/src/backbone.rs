//! Frozen transformer encoder.
//!
//! A stack of pre-norm blocks (norm, multi-head attention, residual; norm,
//! MLP, residual) with every attention matrix recorded per layer and head.
//! Weights are drawn once from a seeded init, quantized to f32 so the FWT1
//! file round-trips bit-exactly, and never change afterwards: the encoder
//! registers them as frozen leaves, so no gradient buffer can ever attach to
//! them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::numerics::tape::{Graph, Mode, ValueId};
use crate::numerics::tensor::{BoolMask, Tensor};
use crate::numerics::NumericsError;
use crate::rng::SplitMix64;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad magic: expected FWT1, found {0:?}")]
    BadMagic(String),
    #[error("truncated weight file: {0}")]
    Truncated(String),
    #[error("numeric failure: {0}")]
    Numerics(#[from] NumericsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub seed: u64,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.layers == 0 {
            return Err(BackboneError::InvalidConfig("layers must be >= 1".into()));
        }
        if self.heads < 2 {
            return Err(BackboneError::InvalidConfig(
                "heads must be >= 2 so auxiliary heads can exist".into(),
            ));
        }
        if self.dim == 0 || self.dim % self.heads != 0 {
            return Err(BackboneError::InvalidConfig(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(BackboneError::InvalidConfig("mlp_ratio must be > 0".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Total scalar count, by shape arithmetic (no allocation).
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let m = self.mlp_hidden();
        // ln1 (2d) + qkv (3 d*d) + out proj (d*d + d) + ln2 (2d) + mlp (d*m + m + m*d + d)
        self.layers * (2 * d + 3 * d * d + d * d + d + 2 * d + d * m + m + m * d + d)
    }
}

struct LayerWeights {
    ln1_gamma: Arc<Tensor>,
    ln1_beta: Arc<Tensor>,
    // Per-head projections, each dim x head_dim.
    wq: Vec<Arc<Tensor>>,
    wk: Vec<Arc<Tensor>>,
    wv: Vec<Arc<Tensor>>,
    wo: Arc<Tensor>,
    bo: Arc<Tensor>,
    ln2_gamma: Arc<Tensor>,
    ln2_beta: Arc<Tensor>,
    w1: Arc<Tensor>,
    b1: Arc<Tensor>,
    w2: Arc<Tensor>,
    b2: Arc<Tensor>,
}

pub struct FrozenBackbone {
    config: BackboneConfig,
    layers: Vec<LayerWeights>,
}

/// Per-layer, per-head attention matrices from one forward pass, detached
/// from any tape. `sink_index` is the sequence position of the [SINK] token
/// when one was present.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    layers: Vec<Vec<Tensor>>,
    pub sink_index: Option<usize>,
}

impl AttentionRecord {
    pub fn new(layers: Vec<Vec<Tensor>>, sink_index: Option<usize>) -> AttentionRecord {
        AttentionRecord { layers, sink_index }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn head_count(&self) -> usize {
        self.layers.first().map(|h| h.len()).unwrap_or(0)
    }

    pub fn seq_len(&self) -> usize {
        self.layers
            .first()
            .and_then(|h| h.first())
            .map(|t| t.rows())
            .unwrap_or(0)
    }

    pub fn head(&self, layer: usize, head: usize) -> &Tensor {
        &self.layers[layer][head]
    }
}

/// Live handles into a traced forward pass: final states plus every
/// attention node, still differentiable.
pub struct EncodedSequence {
    pub final_states: ValueId,
    /// attention[layer][head], each a T x T value on the tape.
    pub attention: Vec<Vec<ValueId>>,
}

impl FrozenBackbone {
    /// Seeded init: weights N(0, 0.02), output projections scaled by
    /// 1/sqrt(2L), norm scales one, biases zero. Every draw is quantized to
    /// f32 so persistence is lossless.
    pub fn init_frozen(config: BackboneConfig) -> Result<FrozenBackbone, BackboneError> {
        config.validate()?;
        let mut rng = SplitMix64::new(config.seed);
        let d = config.dim;
        let dh = config.head_dim();
        let m = config.mlp_hidden();
        let out_scale = 1.0 / (2.0 * config.layers as f64).sqrt();

        let draw = |rows: usize, cols: usize, std: f64, rng: &mut SplitMix64| {
            let data: Vec<f64> =
                (0..rows * cols).map(|_| (rng.normal(std) as f32) as f64).collect();
            Arc::new(Tensor::from_vec(vec![rows, cols], data).expect("finite init"))
        };

        // A trained ViT has O(1) attention logits; a frozen random one at
        // std 0.02 would not (q.k spreads shrink with the squared std and
        // attention degenerates to uniform). The norm gain restores usable
        // attention structure while leaving the projection init as specified.
        let ln_gain = 8.0;
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                ln1_gamma: Arc::new(Tensor::filled(vec![1, d], ln_gain)),
                ln1_beta: Arc::new(Tensor::zeros(vec![1, d])),
                wq: (0..config.heads).map(|_| draw(d, dh, 0.02, &mut rng)).collect(),
                wk: (0..config.heads).map(|_| draw(d, dh, 0.02, &mut rng)).collect(),
                wv: (0..config.heads).map(|_| draw(d, dh, 0.02, &mut rng)).collect(),
                wo: draw(d, d, 0.02 * out_scale, &mut rng),
                bo: Arc::new(Tensor::zeros(vec![1, d])),
                ln2_gamma: Arc::new(Tensor::filled(vec![1, d], ln_gain)),
                ln2_beta: Arc::new(Tensor::zeros(vec![1, d])),
                w1: draw(d, m, 0.02, &mut rng),
                b1: Arc::new(Tensor::zeros(vec![1, m])),
                w2: draw(m, d, 0.02 * out_scale, &mut rng),
                b2: Arc::new(Tensor::zeros(vec![1, d])),
            })
            .collect();
        Ok(FrozenBackbone { config, layers })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn weights_in_order(&self) -> Vec<&Arc<Tensor>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.ln1_gamma);
            out.push(&l.ln1_beta);
            out.extend(l.wq.iter());
            out.extend(l.wk.iter());
            out.extend(l.wv.iter());
            out.push(&l.wo);
            out.push(&l.bo);
            out.push(&l.ln2_gamma);
            out.push(&l.ln2_beta);
            out.push(&l.w1);
            out.push(&l.b1);
            out.push(&l.w2);
            out.push(&l.b2);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.weights_in_order().iter().map(|t| t.numel()).sum()
    }

    /// FNV-1a over every weight byte in persistence order. Bitwise identical
    /// weights give identical checksums.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for t in self.weights_in_order() {
            for v in t.data() {
                for b in v.to_le_bytes() {
                    hash ^= b as u64;
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }

    /// Forward pass on a caller-provided graph. Records all attention nodes.
    pub fn encode_traced(
        &self,
        graph: &mut Graph,
        input: ValueId,
        mask: &BoolMask,
    ) -> Result<EncodedSequence, NumericsError> {
        let mut x = input;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let g1 = graph.frozen_shared(layer.ln1_gamma.clone());
            let b1 = graph.frozen_shared(layer.ln1_beta.clone());
            let xn = graph.layer_norm(x, g1, b1)?;

            let mut head_outs = Vec::with_capacity(layer.wq.len());
            let mut head_attn = Vec::with_capacity(layer.wq.len());
            for h in 0..layer.wq.len() {
                let wq = graph.frozen_shared(layer.wq[h].clone());
                let wk = graph.frozen_shared(layer.wk[h].clone());
                let wv = graph.frozen_shared(layer.wv[h].clone());
                let q = graph.matmul(xn, wq)?;
                let k = graph.matmul(xn, wk)?;
                let v = graph.matmul(xn, wv)?;
                let (out, attn) = graph.attention(q, k, v, Some(mask))?;
                head_outs.push(out);
                head_attn.push(attn);
            }
            let merged = graph.concat_cols(&head_outs)?;
            let wo = graph.frozen_shared(layer.wo.clone());
            let bo = graph.frozen_shared(layer.bo.clone());
            let proj = graph.matmul(merged, wo)?;
            let proj = graph.add_row_broadcast(proj, bo)?;
            x = graph.add(x, proj)?;

            let g2 = graph.frozen_shared(layer.ln2_gamma.clone());
            let b2 = graph.frozen_shared(layer.ln2_beta.clone());
            let xn2 = graph.layer_norm(x, g2, b2)?;
            let w1 = graph.frozen_shared(layer.w1.clone());
            let b1m = graph.frozen_shared(layer.b1.clone());
            let w2 = graph.frozen_shared(layer.w2.clone());
            let b2m = graph.frozen_shared(layer.b2.clone());
            let h1 = graph.matmul(xn2, w1)?;
            let h1 = graph.add_row_broadcast(h1, b1m)?;
            let act = graph.gelu(h1)?;
            let h2 = graph.matmul(act, w2)?;
            let h2 = graph.add_row_broadcast(h2, b2m)?;
            x = graph.add(x, h2)?;

            attention.push(head_attn);
        }
        Ok(EncodedSequence { final_states: x, attention })
    }

    /// Inference-mode forward: no tape, detached attention record.
    pub fn encode(
        &self,
        seq: &Tensor,
        mask: &BoolMask,
        sink_index: Option<usize>,
    ) -> Result<(Tensor, AttentionRecord), NumericsError> {
        let mut graph = Graph::new(Mode::Inference);
        let input = graph.frozen(seq);
        let encoded = self.encode_traced(&mut graph, input, mask)?;
        debug_assert_eq!(graph.recorded_ops(), 0);
        let record = detach_attention(&graph, &encoded.attention, sink_index);
        Ok((graph.detach(encoded.final_states), record))
    }

    // ---- persistence (FWT1) -------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<(), BackboneError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"FWT1")?;
        for v in [
            self.config.dim as u32,
            self.config.layers as u32,
            self.config.heads as u32,
            self.config.mlp_hidden() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.config.seed.to_le_bytes())?;
        for t in self.weights_in_order() {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FrozenBackbone, BackboneError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_or_truncated(&mut r, &mut magic, "magic")?;
        if &magic != b"FWT1" {
            return Err(BackboneError::BadMagic(String::from_utf8_lossy(&magic).into_owned()));
        }
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            let mut buf = [0u8; 4];
            read_or_truncated(&mut r, &mut buf, "header")?;
            *h = u32::from_le_bytes(buf);
        }
        let mut seed_buf = [0u8; 8];
        read_or_truncated(&mut r, &mut seed_buf, "seed")?;
        let [dim, layers, heads, mlp_hidden] = header.map(|v| v as usize);
        let config = BackboneConfig {
            dim,
            layers,
            heads,
            mlp_ratio: mlp_hidden as f64 / dim.max(1) as f64,
            seed: u64::from_le_bytes(seed_buf),
        };
        config.validate()?;
        let d = dim;
        let dh = config.head_dim();
        let m = mlp_hidden;

        let mut read_tensor = |rows: usize, cols: usize| -> Result<Arc<Tensor>, BackboneError> {
            let mut bytes = vec![0u8; 4 * rows * cols];
            read_or_truncated(&mut r, &mut bytes, "weights")?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            Ok(Arc::new(Tensor::from_vec(vec![rows, cols], data).map_err(BackboneError::from)?))
        };

        let mut loaded = Vec::with_capacity(layers);
        for _ in 0..layers {
            loaded.push(LayerWeights {
                ln1_gamma: read_tensor(1, d)?,
                ln1_beta: read_tensor(1, d)?,
                wq: (0..heads).map(|_| read_tensor(d, dh)).collect::<Result<_, _>>()?,
                wk: (0..heads).map(|_| read_tensor(d, dh)).collect::<Result<_, _>>()?,
                wv: (0..heads).map(|_| read_tensor(d, dh)).collect::<Result<_, _>>()?,
                wo: read_tensor(d, d)?,
                bo: read_tensor(1, d)?,
                ln2_gamma: read_tensor(1, d)?,
                ln2_beta: read_tensor(1, d)?,
                w1: read_tensor(d, m)?,
                b1: read_tensor(1, m)?,
                w2: read_tensor(m, d)?,
                b2: read_tensor(1, d)?,
            });
        }
        Ok(FrozenBackbone { config, layers: loaded })
    }

    /// Test/ablation constructor with explicit weights.
    #[doc(hidden)]
    pub fn from_raw_layers(
        config: BackboneConfig,
        raw: Vec<Vec<Tensor>>,
    ) -> Result<FrozenBackbone, BackboneError> {
        config.validate()?;
        let heads = config.heads;
        let mut layers = Vec::with_capacity(raw.len());
        for mut ws in raw {
            if ws.len() != 10 + 3 * heads {
                return Err(BackboneError::InvalidConfig(format!(
                    "expected {} tensors per layer, got {}",
                    10 + 3 * heads,
                    ws.len()
                )));
            }
            let mut take = |n: usize| -> Vec<Arc<Tensor>> {
                ws.drain(..n).map(Arc::new).collect()
            };
            let ln1 = take(2);
            let wq = take(heads);
            let wk = take(heads);
            let wv = take(heads);
            let rest = take(7);
            let [wo, bo, ln2_gamma, ln2_beta, w1, b1, w2]: [Arc<Tensor>; 7] =
                rest.try_into().expect("seven tail tensors");
            let b2 = take(1).remove(0);
            layers.push(LayerWeights {
                ln1_gamma: ln1[0].clone(),
                ln1_beta: ln1[1].clone(),
                wq,
                wk,
                wv,
                wo,
                bo,
                ln2_gamma,
                ln2_beta,
                w1,
                b1,
                w2,
                b2,
            });
        }
        Ok(FrozenBackbone { config, layers })
    }
}

/// Copy attention values out of a finished graph into a detached record.
pub fn detach_attention(
    graph: &Graph,
    attention: &[Vec<ValueId>],
    sink_index: Option<usize>,
) -> AttentionRecord {
    let layers = attention
        .iter()
        .map(|heads| heads.iter().map(|&id| graph.detach(id)).collect())
        .collect();
    AttentionRecord::new(layers, sink_index)
}

fn read_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), BackboneError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            BackboneError::Truncated(what.to_string())
        } else {
            BackboneError::Io(e)
        }
    })
}
