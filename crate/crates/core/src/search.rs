//! Global retrieval: fragment embeddings, cosine similarity, ranked
//! candidates, and the binary index file.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{embed_inputs, gemm, prepare_input, Model};
use crate::tearing::FragmentRecord;

pub const INDEX_MAGIC: &[u8; 4] = b"FSIX";
pub const INDEX_VERSION: u32 = 1;
/// Rows of the similarity matrix computed per block.
pub const SIMILARITY_BLOCK: usize = 256;

/// Row-major `N x dim` embedding matrix with the fragment id of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub ids: Vec<usize>,
    pub dim: usize,
    pub data: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingIndex {
    /// Builds an index from equal-length rows, optionally L2-normalizing them.
    pub fn new(ids: Vec<usize>, rows: Vec<Vec<f64>>, normalize: bool) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::ShapeMismatch(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("embedding rows differ in width".into()));
        }
        let mut data: Vec<f64> = rows.into_iter().flatten().collect();
        if normalize {
            for row in data.chunks_mut(dim.max(1)) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    return Err(Error::InvalidInput("cannot normalize a zero embedding".into()));
                }
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(Self {
            ids,
            dim,
            data,
            normalized: normalize,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.len() + 4 * self.data.len());
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.push(u8::from(self.normalized));
        for &id in &self.ids {
            buf.extend_from_slice(&(id as u64).to_le_bytes());
        }
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        crate::fsio::atomic_write(path, &buf)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::format(path, m);
        if bytes.len() < 25 || &bytes[..4] != INDEX_MAGIC {
            return Err(bad("not an embedding index"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported index version {version}")));
        }
        let (n, dim) = (u64_at(8) as usize, u64_at(16) as usize);
        let normalized = bytes[24] != 0;
        let expect = 25usize
            .checked_add(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)
            .and_then(|s| s.checked_add(n.checked_mul(dim)?.checked_mul(4)?))
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != expect {
            return Err(bad(&format!("expected {expect} bytes, found {}", bytes.len())));
        }
        let ids = (0..n).map(|k| u64_at(25 + 8 * k) as usize).collect();
        let base = 25 + 8 * n;
        let data = (0..n * dim)
            .map(|k| f32::from_le_bytes(bytes[base + 4 * k..base + 4 * k + 4].try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            ids,
            dim,
            data,
            normalized,
        })
    }
}

/// Embeds every fragment with the searching module; rows are unit-norm.
/// Fragments with empty contours are skipped.
pub fn embed_all(fragments: &[&FragmentRecord], model: &Model) -> Result<EmbeddingIndex> {
    let mut ids = Vec::new();
    let mut inputs = Vec::new();
    for f in fragments {
        if f.contour.is_empty() {
            log::warn!("fragment {} has an empty contour; not indexed", f.id);
            continue;
        }
        ids.push(f.id);
        inputs.push(std::rc::Rc::new(prepare_input(&f.pixels, &f.mask, &f.contour, &model.cfg)?));
    }
    EmbeddingIndex::new(ids, embed_inputs(model, &inputs)?, true)
}

/// `N x N` row-major cosine similarity `V Vᵀ`, exactly symmetric with a unit
/// diagonal.
pub fn cosine_similarity_matrix(index: &EmbeddingIndex) -> Result<Vec<f64>> {
    if !index.normalized {
        return Err(Error::InvalidInput("similarity needs a normalized index".into()));
    }
    let (n, d) = (index.len(), index.dim);
    let mut out = vec![0.0; n * n];
    for start in (0..n).step_by(SIMILARITY_BLOCK) {
        let rows = SIMILARITY_BLOCK.min(n - start);
        let a = &index.data[start * d..(start + rows) * d];
        gemm(rows, d, n, 1.0, a, false, &index.data, true, 0.0, &mut out[start * n..(start + rows) * n]);
    }
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in 0..i {
            out[i * n + j] = out[j * n + i];
        }
    }
    Ok(out)
}

/// Positions (not ids) of all other rows by descending similarity, ties
/// broken by ascending fragment id.
pub fn ranking(index: &EmbeddingIndex, sim: &[f64], query: usize) -> Vec<usize> {
    let n = index.len();
    let row = &sim[query * n..(query + 1) * n];
    let mut order: Vec<usize> = (0..n).filter(|&k| k != query).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(index.ids[a].cmp(&index.ids[b])));
    order
}

/// Ids of the `k` most similar fragments to row `query`, never itself.
pub fn top_k(index: &EmbeddingIndex, sim: &[f64], query: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut r = ranking(index, sim, query);
    r.truncate(k);
    Ok(r.into_iter().map(|p| index.ids[p]).collect())
}

/// Full ranked id list of every row.
pub fn rank_table(index: &EmbeddingIndex, sim: &[f64]) -> Vec<Vec<usize>> {
    (0..index.len())
        .map(|q| ranking(index, sim, q).into_iter().map(|p| index.ids[p]).collect())
        .collect()
}

/// Union of every row's top-k as unordered id pairs `(min, max)`.
pub fn retrieve_candidate_pairs(index: &EmbeddingIndex, sim: &[f64], k: usize) -> Result<BTreeSet<(usize, usize)>> {
    let mut out = BTreeSet::new();
    for q in 0..index.len() {
        let a = index.ids[q];
        for b in top_k(index, sim, q, k)? {
            out.insert((a.min(b), a.max(b)));
        }
    }
    Ok(out)
}
