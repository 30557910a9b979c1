//! Sink-aware attention control: auxiliary-head selection, the attraction
//! loss, and the collapse diagnostics (sink rate, dominant-token collapse
//! rate, inter-layer sink consistency, per-layer sink mass).

use crate::backbone::AttentionRecord;
use crate::numerics::tape::{Graph, ValueId};
use crate::numerics::NumericsError;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("rho must satisfy 0 <= rho < 1, got {0}")]
    InvalidRho(f64),
    #[error("no discriminative heads: rho {rho} selects all {heads} heads as auxiliary")]
    NoDiscriminativeHeads { rho: f64, heads: usize },
    #[error("no calibration records")]
    EmptyRecords,
    #[error("inconsistent attention records: {0}")]
    InconsistentShapes(String),
    #[error("sink consistency needs >= 2 layers, got {0}")]
    NotEnoughLayers(usize),
    #[error("unparsable head partition: {0}")]
    Parse(String),
    #[error("numeric failure: {0}")]
    Numerics(#[from] NumericsError),
}

/// Per-layer split of attention heads into auxiliary (noise absorbers) and
/// discriminative sets. Frozen once selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadPartition {
    aux: Vec<Vec<usize>>,
    star: Vec<Vec<usize>>,
}

impl HeadPartition {
    /// Everything discriminative (the rho = 0 partition).
    pub fn all_star(layers: usize, heads: usize) -> HeadPartition {
        HeadPartition {
            aux: vec![Vec::new(); layers],
            star: vec![(0..heads).collect(); layers],
        }
    }

    pub fn layer_count(&self) -> usize {
        self.aux.len()
    }

    pub fn aux(&self, layer: usize) -> &[usize] {
        &self.aux[layer]
    }

    pub fn star(&self, layer: usize) -> &[usize] {
        &self.star[layer]
    }

    pub fn has_aux(&self) -> bool {
        self.aux.iter().any(|a| !a.is_empty())
    }

    /// CSV rows `layer,head,set` with set in {aux, star}.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,set\n");
        for (l, (aux, star)) in self.aux.iter().zip(&self.star).enumerate() {
            for &h in aux {
                out.push_str(&format!("{l},{h},aux\n"));
            }
            for &h in star {
                out.push_str(&format!("{l},{h},star\n"));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<HeadPartition, SinkError> {
        let mut rows: Vec<(usize, usize, bool)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("layer")) {
                continue;
            }
            let mut fields = line.split(',');
            let parse = |s: Option<&str>| -> Result<usize, SinkError> {
                s.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| SinkError::Parse(format!("line {}: {line:?}", i + 1)))
            };
            let layer = parse(fields.next())?;
            let head = parse(fields.next())?;
            let set = fields
                .next()
                .map(str::trim)
                .ok_or_else(|| SinkError::Parse(format!("line {}: missing set", i + 1)))?;
            let is_aux = match set {
                "aux" => true,
                "star" => false,
                other => return Err(SinkError::Parse(format!("unknown set {other:?}"))),
            };
            rows.push((layer, head, is_aux));
        }
        let layers = rows.iter().map(|r| r.0 + 1).max().ok_or(SinkError::EmptyRecords)?;
        let mut aux = vec![Vec::new(); layers];
        let mut star = vec![Vec::new(); layers];
        for (l, h, is_aux) in rows {
            if is_aux {
                aux[l].push(h);
            } else {
                star[l].push(h);
            }
        }
        for l in 0..layers {
            aux[l].sort_unstable();
            star[l].sort_unstable();
        }
        Ok(HeadPartition { aux, star })
    }
}

fn check_consistent(records: &[AttentionRecord]) -> Result<(usize, usize), SinkError> {
    let first = records.first().ok_or(SinkError::EmptyRecords)?;
    let (layers, heads) = (first.layer_count(), first.head_count());
    for r in records {
        if r.layer_count() != layers || r.head_count() != heads {
            return Err(SinkError::InconsistentShapes(format!(
                "{}x{} vs {layers}x{heads}",
                r.layer_count(),
                r.head_count()
            )));
        }
    }
    Ok((layers, heads))
}

/// Shannon entropy of one attention row; zero entries contribute zero.
fn row_entropy(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Rank heads per layer by mean attention entropy over all query rows of all
/// calibration records; the ceil(rho * H) most diffuse become auxiliary.
/// Ties break toward the lower head index.
pub fn select_aux_heads(
    records: &[AttentionRecord],
    rho: f64,
) -> Result<HeadPartition, SinkError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(SinkError::InvalidRho(rho));
    }
    let (layers, heads) = check_consistent(records)?;
    let n_aux = (rho * heads as f64).ceil() as usize;
    if n_aux >= heads {
        return Err(SinkError::NoDiscriminativeHeads { rho, heads });
    }
    let mut aux = Vec::with_capacity(layers);
    let mut star = Vec::with_capacity(layers);
    for layer in 0..layers {
        let mut scored: Vec<(f64, usize)> = (0..heads)
            .map(|h| {
                let mut total = 0.0;
                let mut rows = 0usize;
                for r in records {
                    let a = r.head(layer, h);
                    for q in 0..a.rows() {
                        total += row_entropy(a.row_slice(q));
                    }
                    rows += a.rows();
                }
                (total / rows as f64, h)
            })
            .collect();
        // Highest entropy first; equal entropies prefer the lower index.
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut a: Vec<usize> = scored[..n_aux].iter().map(|&(_, h)| h).collect();
        let mut s: Vec<usize> = scored[n_aux..].iter().map(|&(_, h)| h).collect();
        a.sort_unstable();
        s.sort_unstable();
        aux.push(a);
        star.push(s);
    }
    Ok(HeadPartition { aux, star })
}

/// Attraction loss on a detached record:
/// `-lambda * sum_layers mean_{h in aux} mean_rows A[row, sink]`.
/// Zero when the record has no sink column or no auxiliary heads.
pub fn sink_loss_value(
    record: &AttentionRecord,
    parts: &HeadPartition,
    lambda: f64,
) -> f64 {
    let Some(sink) = record.sink_index else { return 0.0 };
    if lambda == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for layer in 0..record.layer_count() {
        let aux = parts.aux(layer);
        if aux.is_empty() {
            continue;
        }
        let mut layer_sum = 0.0;
        for &h in aux {
            layer_sum += column_mean_value(record.head(layer, h), sink);
        }
        total += layer_sum / aux.len() as f64;
    }
    -lambda * total
}

/// Taped attraction loss over live attention nodes, differentiable through
/// the softmax. Returns `None` when there is nothing to attract (no sink,
/// no aux heads, or lambda zero).
pub fn sink_loss_traced(
    graph: &mut Graph,
    attention: &[Vec<ValueId>],
    sink_index: Option<usize>,
    parts: &HeadPartition,
    lambda: f64,
) -> Result<Option<ValueId>, SinkError> {
    let Some(sink) = sink_index else { return Ok(None) };
    if lambda == 0.0 || !parts.has_aux() {
        return Ok(None);
    }
    let mut per_layer: Vec<ValueId> = Vec::new();
    for (layer, heads) in attention.iter().enumerate() {
        let aux = parts.aux(layer);
        if aux.is_empty() {
            continue;
        }
        let mut acc: Option<ValueId> = None;
        for &h in aux {
            let mass = graph.column_mean(heads[h], sink)?;
            acc = Some(match acc {
                None => mass,
                Some(prev) => graph.add(prev, mass)?,
            });
        }
        let layer_mean = graph.scale(acc.expect("aux nonempty"), 1.0 / aux.len() as f64)?;
        per_layer.push(layer_mean);
    }
    let mut total = per_layer[0];
    for &l in &per_layer[1..] {
        total = graph.add(total, l)?;
    }
    Ok(Some(graph.scale(total, -lambda)?))
}

fn column_mean_value(a: &crate::numerics::Tensor, col: usize) -> f64 {
    let rows = a.rows();
    (0..rows).map(|r| a.at(r, col)).sum::<f64>() / rows as f64
}

/// Which heads a sink metric averages over.
#[derive(Debug, Clone, Copy)]
pub enum HeadScope<'a> {
    All,
    AuxOnly(&'a HeadPartition),
    NonAuxOnly(&'a HeadPartition),
}

fn scope_selects(scope: HeadScope<'_>, layer: usize, head: usize) -> bool {
    match scope {
        HeadScope::All => true,
        HeadScope::AuxOnly(p) => p.aux(layer).contains(&head),
        HeadScope::NonAuxOnly(p) => p.star(layer).contains(&head),
    }
}

/// Mean attention mass absorbed by the sink column over the selected
/// layers/heads/query rows. `None` when the record has no sink token or the
/// scope selects nothing.
pub fn sink_rate(record: &AttentionRecord, scope: HeadScope<'_>) -> Option<f64> {
    let sink = record.sink_index?;
    let mut total = 0.0;
    let mut count = 0usize;
    for layer in 0..record.layer_count() {
        for head in 0..record.head_count() {
            if scope_selects(scope, layer, head) {
                total += column_mean_value(record.head(layer, head), sink);
                count += 1;
            }
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Dominant-token collapse: mean over layers and heads of the largest single
/// non-sink key column's average attention mass. Defined with or without a
/// sink token, so the no-sink ablation row stays comparable.
pub fn collapse_rate(record: &AttentionRecord) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for layer in 0..record.layer_count() {
        for head in 0..record.head_count() {
            let a = record.head(layer, head);
            let mut worst = 0.0f64;
            for col in 0..a.cols() {
                if record.sink_index == Some(col) {
                    continue;
                }
                worst = worst.max(column_mean_value(a, col));
            }
            total += worst;
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Per-layer sink rate (for the layer-wise sink mass curve). `None` without
/// a sink token.
pub fn layer_sink_mass(record: &AttentionRecord) -> Option<Vec<f64>> {
    let sink = record.sink_index?;
    Some(
        (0..record.layer_count())
            .map(|layer| {
                let heads = record.head_count();
                (0..heads)
                    .map(|h| column_mean_value(record.head(layer, h), sink))
                    .sum::<f64>()
                    / heads as f64
            })
            .collect(),
    )
}

/// Mean Pearson correlation between consecutive per-layer heatmaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkConsistency {
    pub value: f64,
    /// Pairs where one side had zero variance; they contribute 0.
    pub degenerate_pairs: usize,
}

pub fn sink_consistency<S: AsRef<[f64]>>(
    per_layer_heatmaps: &[S],
) -> Result<SinkConsistency, SinkError> {
    let n = per_layer_heatmaps.len();
    if n < 2 {
        return Err(SinkError::NotEnoughLayers(n));
    }
    let mut total = 0.0;
    let mut degenerate = 0usize;
    for pair in per_layer_heatmaps.windows(2) {
        match pearson(pair[0].as_ref(), pair[1].as_ref()) {
            Some(r) => total += r,
            None => degenerate += 1,
        }
    }
    Ok(SinkConsistency { value: total / (n - 1) as f64, degenerate_pairs: degenerate })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
