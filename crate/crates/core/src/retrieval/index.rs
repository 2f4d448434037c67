use std::cmp::Ordering;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numcore::DenseVector;

/// What the rows of an index embed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexKind {
    Image,
    Caption,
    Entity,
}

impl IndexKind {
    pub fn code(self) -> u8 {
        match self {
            IndexKind::Image => 0,
            IndexKind::Caption => 1,
            IndexKind::Entity => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(IndexKind::Image),
            1 => Ok(IndexKind::Caption),
            2 => Ok(IndexKind::Entity),
            _ => Err(Error::format(format!("unknown index kind {code}"))),
        }
    }
}

/// One embedding to be indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: DenseVector,
}

/// Unit-normalized 32-bit rows with their ids; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    kind: IndexKind,
    rows: Vec<f32>,
}

impl EmbeddingIndex {
    pub(crate) fn from_parts(ids: Vec<String>, dim: usize, kind: IndexKind, rows: Vec<f32>) -> Result<Self> {
        if rows.len() != ids.len() * dim {
            return Err(Error::shape(format!("{} values for {} rows of dim {dim}", rows.len(), ids.len())));
        }
        check_unique(&ids)?;
        Ok(Self { ids, dim, kind, rows })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.rows
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Cosine score of a unit query against every row, in index order.
    pub fn scan(&self, unit_query: &[f32]) -> Vec<f32> {
        self.rows.chunks_exact(self.dim.max(1)).map(|r| dot(r, unit_query)).collect()
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

/// Dot product of 32-bit rows accumulated in 64 bits.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32
}

/// L2-normalizes in 64 bits, then rounds to 32.
pub(crate) fn unit_f32(v: &[f64]) -> Result<Vec<f32>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding".into()));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::Degenerate("zero embedding cannot be normalized".into()));
    }
    Ok(v.iter().map(|x| (x / n) as f32).collect())
}

pub fn build_index(records: &[EmbeddingRecord], kind: IndexKind) -> Result<EmbeddingIndex> {
    let dim = records.first().map_or(0, |r| r.vector.dim());
    let mut rows = Vec::with_capacity(records.len() * dim);
    for r in records {
        if r.vector.dim() != dim {
            return Err(Error::shape(format!("record {} has dim {}, expected {dim}", r.id, r.vector.dim())));
        }
        rows.extend(unit_f32(r.vector.as_slice()).map_err(|e| match e {
            Error::Degenerate(_) => Error::Degenerate(format!("record {} is a zero vector", r.id)),
            other => other,
        })?);
    }
    EmbeddingIndex::from_parts(records.iter().map(|r| r.id.clone()).collect(), dim, kind, rows)
}

/// Ranked answer to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: String,
    /// `(id, score)`, scores non-increasing, ties by ascending id.
    pub ranked: Vec<(String, f32)>,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|(id, _)| id.as_str())
    }
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(scores: &[f32], ids: &[String], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b]))
}

/// Indices of the top `k` scores in rank order.
pub fn top_k(scores: &[f32], ids: &[String], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(order.len());
    if k == 0 {
        return Vec::new();
    }
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, ids, a, b));
        order.truncate(k);
    }
    order.sort_unstable_by(|&a, &b| rank_order(scores, ids, a, b));
    order
}

pub fn query_scores(q: &DenseVector, idx: &EmbeddingIndex) -> Result<Vec<f32>> {
    if q.dim() != idx.dim() {
        return Err(Error::shape(format!("query has dim {}, index has {}", q.dim(), idx.dim())));
    }
    Ok(idx.scan(&unit_f32(q.as_slice())?))
}

/// Top-`k` rows of `idx` by cosine similarity to `q`.
pub fn query(q: &DenseVector, idx: &EmbeddingIndex, k: usize) -> Result<RetrievalResult> {
    query_named("", q, idx, k)
}

pub fn query_named(name: &str, q: &DenseVector, idx: &EmbeddingIndex, k: usize) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let scores = query_scores(q, idx)?;
    Ok(RetrievalResult {
        query: name.to_string(),
        ranked: top_k(&scores, idx.ids(), k)
            .into_iter()
            .map(|i| (idx.ids()[i].clone(), scores[i]))
            .collect(),
    })
}
