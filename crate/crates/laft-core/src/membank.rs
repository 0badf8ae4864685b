//! Memory bank of normal feature slices, greedy k-center core-set sampling,
//! exact top-K search, and weighted feature editing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// All normal feature slices, one row per spatial position per training
/// tensor, in (sample, row-major position) order.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    dim: usize,
    data: Vec<f32>,
}

impl MemoryBank {
    pub fn from_rows(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::shape(format!(
                "bank buffer of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("bank rows must be finite"));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Greedily selected subset of a bank, in selection order.
#[derive(Debug, Clone)]
pub struct CoreSet {
    dim: usize,
    indices: Vec<usize>,
    data: Vec<f32>,
}

impl CoreSet {
    /// Rebuilds a core set from persisted rows and source indices.
    pub fn from_parts(dim: usize, indices: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != indices.len() * dim || indices.is_empty() {
            return Err(Error::shape(format!(
                "core set of {} indices does not match buffer of {} values (dim {dim})",
                indices.len(),
                data.len()
            )));
        }
        Ok(Self { dim, indices, data })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The rows as an `[n_c, dim]` tensor (for persistence).
    pub fn rows_tensor(&self) -> Tensor {
        Tensor::new(vec![self.indices.len(), self.dim], self.data.clone())
            .expect("core set rows are finite by construction")
    }
}

/// Feature-editing settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditConfig {
    /// Neighbor count K.
    pub k: usize,
    pub weight_mode: WeightMode,
}

/// How the Eq-10 style weights are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Weights `1 - softmax(d)_k` as published; they sum to K - 1.
    Verbatim,
    /// The same weights divided by K - 1 so they sum to 1.
    #[default]
    Normalized,
}

impl WeightMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "verbatim" => Ok(Self::Verbatim),
            "normalized" => Ok(Self::Normalized),
            other => Err(Error::config(format!(
                "membank.weight_mode must be verbatim or normalized, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Verbatim => "verbatim",
            Self::Normalized => "normalized",
        }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Builds the bank from `[h,w,c]` training tensors.
pub fn build_bank(train: &[Tensor]) -> Result<MemoryBank> {
    let first = train
        .first()
        .ok_or_else(|| Error::data("cannot build a bank from an empty training set"))?;
    let &[_, _, c] = first.shape() else {
        return Err(Error::shape(format!(
            "bank expects [h,w,c] tensors, got {:?}",
            first.shape()
        )));
    };
    let mut data = Vec::new();
    for t in train {
        let &[_, _, tc] = t.shape() else {
            return Err(Error::shape(format!("bank expects [h,w,c] tensors, got {:?}", t.shape())));
        };
        if tc != c {
            return Err(Error::shape(format!("channel mismatch: {tc} vs {c}")));
        }
        data.extend_from_slice(t.data());
    }
    MemoryBank::from_rows(c, data)
}

/// Greedy k-center selection: keep `floor(n * keep_rate)` rows, starting at
/// `seed_index`, each next row maximizing its distance to the selected set.
/// Ties break toward the lowest row index.
pub fn greedy_coreset(bank: &MemoryBank, keep_rate: f64, seed_index: usize) -> Result<CoreSet> {
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::invalid(format!(
            "keep rate must be in (0, 1], got {keep_rate}"
        )));
    }
    let n = bank.len();
    if seed_index >= n {
        return Err(Error::invalid(format!(
            "seed index {seed_index} outside bank of {n} rows"
        )));
    }
    let n_c = (n as f64 * keep_rate).floor() as usize;
    if n_c == 0 {
        return Err(Error::invalid(format!(
            "keep rate {keep_rate} of {n} rows selects nothing"
        )));
    }

    let mut indices = Vec::with_capacity(n_c);
    let mut data = Vec::with_capacity(n_c * bank.dim());
    let mut min_sq = vec![f64::INFINITY; n];
    let mut selected = vec![false; n];

    let mut current = seed_index;
    for _ in 0..n_c {
        indices.push(current);
        data.extend_from_slice(bank.row(current));
        selected[current] = true;
        let center = bank.row(current);
        let mut best_idx = usize::MAX;
        let mut best_sq = f64::NEG_INFINITY;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = sq_dist(bank.row(i), center);
            if d < min_sq[i] {
                min_sq[i] = d;
            }
            if min_sq[i] > best_sq {
                best_sq = min_sq[i];
                best_idx = i;
            }
        }
        if best_idx == usize::MAX {
            break; // keep_rate = 1 and everything selected
        }
        current = best_idx;
    }
    CoreSet::from_parts(bank.dim(), indices, data)
}

/// Exact k nearest rows by Euclidean distance, ascending, ties toward the
/// lowest index. Equivalent to scanning the whole core set.
pub fn knn(coreset: &CoreSet, query: &[f32], k: usize) -> Result<Vec<(usize, f64)>> {
    knn_chunked(coreset, query, k, coreset.len().max(1))
}

/// Partitioned linear scan: per-chunk top-k merged across chunks. Any chunk
/// size produces identical results.
pub fn knn_chunked(
    coreset: &CoreSet,
    query: &[f32],
    k: usize,
    chunk_rows: usize,
) -> Result<Vec<(usize, f64)>> {
    if query.len() != coreset.dim() {
        return Err(Error::shape(format!(
            "query dim {} vs core set dim {}",
            query.len(),
            coreset.dim()
        )));
    }
    if k == 0 || k > coreset.len() {
        return Err(Error::invalid(format!(
            "k = {k} outside [1, {}]",
            coreset.len()
        )));
    }
    if chunk_rows == 0 {
        return Err(Error::invalid("chunk size must be positive"));
    }
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let mut start = 0usize;
    while start < coreset.len() {
        let end = (start + chunk_rows).min(coreset.len());
        for i in start..end {
            let d = sq_dist(coreset.row(i), query);
            let key = (d, i);
            if best.len() == k {
                if let Some(&last) = best.last() {
                    if key >= last {
                        continue;
                    }
                }
            }
            let pos = best.partition_point(|&e| e < key);
            best.insert(pos, key);
            if best.len() > k {
                best.pop();
            }
        }
        start = end;
    }
    Ok(best.into_iter().map(|(d, i)| (i, d.sqrt())).collect())
}

/// Weights for the edited combination of neighbor distances: one minus the
/// softmax of the raw Euclidean distances (max-shifted for stability); in
/// normalized mode they are rescaled to sum to 1.
fn edit_weights(dists: &[f64], mode: WeightMode) -> Vec<f64> {
    let k = dists.len();
    debug_assert!(k >= 2);
    let max = dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = dists.iter().map(|&d| (d - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let scale = match mode {
        WeightMode::Verbatim => 1.0,
        WeightMode::Normalized => 1.0 / (k as f64 - 1.0),
    };
    exps.iter().map(|&e| (1.0 - e / total) * scale).collect()
}

/// Replaces a feature slice with the weighted combination of its top-K
/// nearest core-set rows. K = 1 returns the nearest row in both modes.
pub fn edit_slice(query: &[f32], coreset: &CoreSet, cfg: &EditConfig) -> Result<Vec<f32>> {
    if cfg.k == 0 || cfg.k > coreset.len() {
        return Err(Error::invalid(format!(
            "neighbor count {} outside [1, {}]",
            cfg.k,
            coreset.len()
        )));
    }
    let neighbors = knn(coreset, query, cfg.k)?;
    if cfg.k == 1 {
        return Ok(coreset.row(neighbors[0].0).to_vec());
    }
    let dists: Vec<f64> = neighbors.iter().map(|&(_, d)| d).collect();
    let weights = edit_weights(&dists, cfg.weight_mode);
    let mut out = vec![0.0f64; coreset.dim()];
    for (&(idx, _), &w) in neighbors.iter().zip(&weights) {
        for (o, &v) in out.iter_mut().zip(coreset.row(idx)) {
            *o += w * v as f64;
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

/// Applies [`edit_slice`] independently at every spatial position.
pub fn edit_tensor(x: &Tensor, coreset: &CoreSet, cfg: &EditConfig) -> Result<Tensor> {
    let &[h, w, c] = x.shape() else {
        return Err(Error::shape(format!("edit expects [h,w,c], got {:?}", x.shape())));
    };
    if c != coreset.dim() {
        return Err(Error::shape(format!(
            "tensor channels {c} vs core set dim {}",
            coreset.dim()
        )));
    }
    let mut out = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            out.extend(edit_slice(x.slice_at(i, j), coreset, cfg)?);
        }
    }
    Ok(Tensor::new(vec![h, w, c], out)?)
}

/// Published per-query cost model for the editing scan: `3 n_C (d_l + 1)`
/// floating-point operations.
pub fn query_cost_estimate(n_c: usize, d_l: usize) -> f64 {
    3.0 * n_c as f64 * (d_l as f64 + 1.0)
}
