use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

use super::index::{top_k, EmbeddingIndex, RetrievalResult};

/// Fraction of queries whose top `k` contains a ground-truth id.
pub fn recall_at_k(
    results: &[RetrievalResult],
    ground_truth: &HashMap<String, HashSet<String>>,
    k: usize,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("retrieval results"));
    }
    let mut hits = 0usize;
    for r in results {
        let gt = ground_truth
            .get(&r.query)
            .filter(|g| !g.is_empty())
            .ok_or_else(|| Error::invalid(format!("no ground truth for query {:?}", r.query)))?;
        if r.ids().take(k).any(|id| gt.contains(id)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / results.len() as f64)
}

/// Sum of six recalls given in percent.
pub fn rsum(i2t: [f64; 3], t2i: [f64; 3]) -> f64 {
    i2t.iter().chain(&t2i).sum()
}

/// `β·s_vt + (1 − β)·min(entity_scores)`, or `s_vt` when there are no entities.
pub fn rerank(s_vt: f64, entity_scores: &[f64], beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta {beta} outside [0,1]")));
    }
    if entity_scores.is_empty() {
        return Ok(s_vt);
    }
    let m = entity_scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(beta * s_vt + (1.0 - beta) * m)
}

/// Elementwise mean of equally shaped score matrices.
pub fn ensemble_scores(matrices: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = matrices.first().ok_or(Error::Empty("score matrices"))?;
    if let Some(m) = matrices.iter().find(|m| m.shape() != first.shape()) {
        return Err(Error::shape(format!("score matrix {:?} vs {:?}", m.shape(), first.shape())));
    }
    let n = matrices.len() as f64;
    let mut out = DenseMatrix::zeros(first.rows(), first.cols());
    for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
        *o = matrices.iter().map(|m| m.as_slice()[k]).sum::<f64>() / n;
    }
    Ok(out)
}

/// Recall@{1,5,10} in percent for both directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub i2t: [f64; 3],
    pub t2i: [f64; 3],
}

impl Metrics {
    pub fn rsum(&self) -> f64 {
        rsum(self.i2t, self.t2i)
    }
}

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Image × caption cosine scores from two indexes, rounded to 32 bits.
pub fn similarity_matrix(images: &EmbeddingIndex, captions: &EmbeddingIndex) -> Result<DenseMatrix> {
    if images.dim() != captions.dim() {
        return Err(Error::shape(format!("image dim {} vs caption dim {}", images.dim(), captions.dim())));
    }
    Ok(DenseMatrix::from_fn(images.len(), captions.len(), |i, j| {
        super::index::dot(images.row(i), captions.row(j)) as f64
    }))
}

/// Minimum image–entity score per `(image, caption)`; `None` for captions
/// without entities. `owners[e]` is the caption position of entity row `e`.
pub fn entity_minimums(
    images: &EmbeddingIndex,
    entities: &EmbeddingIndex,
    owners: &[usize],
    captions: usize,
) -> Result<Vec<Vec<Option<f64>>>> {
    if owners.len() != entities.len() {
        return Err(Error::shape(format!("{} owners for {} entities", owners.len(), entities.len())));
    }
    if let Some(&o) = owners.iter().find(|&&o| o >= captions) {
        return Err(Error::invalid(format!("entity owner {o} out of range")));
    }
    if !entities.is_empty() && images.dim() != entities.dim() {
        return Err(Error::shape("image and entity dims differ"));
    }
    Ok((0..images.len())
        .map(|i| {
            let mut row: Vec<Option<f64>> = vec![None; captions];
            for (e, &c) in owners.iter().enumerate() {
                let s = super::index::dot(images.row(i), entities.row(e)) as f64;
                row[c] = Some(row[c].map_or(s, |m: f64| m.min(s)));
            }
            row
        })
        .collect())
}

/// Applies [`rerank`] to every cell, rounding to 32 bits.
pub fn rerank_matrix(scores: &DenseMatrix, minimums: &[Vec<Option<f64>>], beta: f64) -> Result<DenseMatrix> {
    if minimums.len() != scores.rows() || minimums.iter().any(|r| r.len() != scores.cols()) {
        return Err(Error::shape("entity minimums do not match the score matrix"));
    }
    let mut out = DenseMatrix::zeros(scores.rows(), scores.cols());
    for i in 0..scores.rows() {
        for j in 0..scores.cols() {
            let e: Vec<f64> = minimums[i][j].into_iter().collect();
            out.set(i, j, rerank(scores.get(i, j), &e, beta)? as f32 as f64);
        }
    }
    Ok(out)
}

fn ranked_row(query: &str, scores: &[f64], ids: &[String], k: usize) -> RetrievalResult {
    let s: Vec<f32> = scores.iter().map(|&x| x as f32).collect();
    RetrievalResult {
        query: query.to_string(),
        ranked: top_k(&s, ids, k).into_iter().map(|i| (ids[i].clone(), s[i])).collect(),
    }
}

/// Rankings in both directions of an image × caption score matrix.
pub fn rank_both_ways(
    scores: &DenseMatrix,
    image_ids: &[String],
    caption_ids: &[String],
    k: usize,
) -> Result<(Vec<RetrievalResult>, Vec<RetrievalResult>)> {
    if scores.shape() != (image_ids.len(), caption_ids.len()) {
        return Err(Error::shape(format!(
            "score matrix {:?} for {} images and {} captions",
            scores.shape(),
            image_ids.len(),
            caption_ids.len()
        )));
    }
    let i2t = (0..scores.rows())
        .map(|i| ranked_row(&image_ids[i], scores.row(i), caption_ids, k))
        .collect();
    let t = scores.transpose();
    let t2i = (0..t.rows())
        .map(|j| ranked_row(&caption_ids[j], t.row(j), image_ids, k))
        .collect();
    Ok((i2t, t2i))
}

/// Recall metrics of a score matrix against `(image, caption)` position pairs.
///
/// Image queries count a hit if any of their captions is retrieved; only
/// images and captions that occur in `pairs` are used as queries.
pub fn evaluate(
    scores: &DenseMatrix,
    image_ids: &[String],
    caption_ids: &[String],
    pairs: &[(usize, usize)],
) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::Empty("ground-truth pairs"));
    }
    let mut i2t_gt: HashMap<String, HashSet<String>> = HashMap::new();
    let mut t2i_gt: HashMap<String, HashSet<String>> = HashMap::new();
    for &(i, c) in pairs {
        let (img, cap) = (
            image_ids.get(i).ok_or_else(|| Error::invalid(format!("image {i} out of range")))?,
            caption_ids.get(c).ok_or_else(|| Error::invalid(format!("caption {c} out of range")))?,
        );
        i2t_gt.entry(img.clone()).or_default().insert(cap.clone());
        t2i_gt.entry(cap.clone()).or_default().insert(img.clone());
    }
    let (i2t, t2i) = rank_both_ways(scores, image_ids, caption_ids, RECALL_KS[2])?;
    let i2t: Vec<_> = i2t.into_iter().filter(|r| i2t_gt.contains_key(&r.query)).collect();
    let t2i: Vec<_> = t2i.into_iter().filter(|r| t2i_gt.contains_key(&r.query)).collect();
    let mut m = Metrics {
        i2t: [0.0; 3],
        t2i: [0.0; 3],
    };
    for (slot, &k) in RECALL_KS.iter().enumerate() {
        m.i2t[slot] = 100.0 * recall_at_k(&i2t, &i2t_gt, k)?;
        m.t2i[slot] = 100.0 * recall_at_k(&t2i, &t2i_gt, k)?;
    }
    Ok(m)
}

pub const BETA_GRID: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Grid value of β with the highest RSUM; ties go to the larger β.
pub fn select_beta(
    scores: &DenseMatrix,
    minimums: &[Vec<Option<f64>>],
    image_ids: &[String],
    caption_ids: &[String],
    pairs: &[(usize, usize)],
    grid: &[f64],
) -> Result<(f64, Metrics)> {
    let mut best: Option<(f64, Metrics)> = None;
    for &beta in grid {
        let m = evaluate(&rerank_matrix(scores, minimums, beta)?, image_ids, caption_ids, pairs)?;
        if best.as_ref().is_none_or(|(b, bm)| m.rsum() > bm.rsum() || (m.rsum() == bm.rsum() && beta > *b)) {
            best = Some((beta, m));
        }
    }
    best.ok_or(Error::Empty("beta grid"))
}
