use crate::error::Result;
use crate::numcore::{DenseMatrix, DenseVector};
use crate::sgparse::SceneGraph;
use crate::training::{Dataset, ModelParams};

use super::index::{build_index, EmbeddingIndex, EmbeddingRecord, IndexKind};
use super::metrics::{entity_minimums, evaluate, rerank_matrix, select_beta, similarity_matrix, Metrics};

/// Caption-side indexes: one row per caption and one per object node.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionIndexes {
    pub captions: EmbeddingIndex,
    pub entities: EmbeddingIndex,
    /// Caption position of every entity row.
    pub owners: Vec<usize>,
}

/// Entity ids are `<caption id>#<object node id>`.
pub fn entity_id(caption: &str, object: u32) -> String {
    format!("{caption}#{object}")
}

pub fn embed_images(params: &ModelParams, images: &[DenseMatrix], ids: &[String]) -> Result<EmbeddingIndex> {
    let records = images
        .iter()
        .zip(ids)
        .map(|(m, id)| {
            Ok(EmbeddingRecord {
                id: id.clone(),
                vector: params.encode_image(m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    build_index(&records, IndexKind::Image)
}

pub fn embed_captions(params: &ModelParams, graphs: &[SceneGraph], ids: &[String]) -> Result<CaptionIndexes> {
    let encoded = params.encode_captions(graphs)?;
    let mut captions = Vec::with_capacity(graphs.len());
    let mut entities = Vec::new();
    let mut owners = Vec::new();
    for (c, (enc, id)) in encoded.into_iter().zip(ids).enumerate() {
        for (obj, v) in enc.entities {
            entities.push(EmbeddingRecord {
                id: entity_id(id, obj),
                vector: v,
            });
            owners.push(c);
        }
        captions.push(EmbeddingRecord {
            id: id.clone(),
            vector: enc.t,
        });
    }
    Ok(CaptionIndexes {
        captions: build_index(&captions, IndexKind::Caption)?,
        entities: build_index(&entities, IndexKind::Entity)?,
        owners,
    })
}

/// Image × caption scores of one split, with what reranking needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSplit {
    pub scores: DenseMatrix,
    pub minimums: Vec<Vec<Option<f64>>>,
    pub image_ids: Vec<String>,
    pub caption_ids: Vec<String>,
    /// `(image position, caption position)` ground truth.
    pub pairs: Vec<(usize, usize)>,
}

impl ScoredSplit {
    pub fn new(images: &EmbeddingIndex, captions: &CaptionIndexes, pairs: Vec<(usize, usize)>) -> Result<Self> {
        Ok(Self {
            scores: similarity_matrix(images, &captions.captions)?,
            minimums: entity_minimums(images, &captions.entities, &captions.owners, captions.captions.len())?,
            image_ids: images.ids().to_vec(),
            caption_ids: captions.captions.ids().to_vec(),
            pairs,
        })
    }

    /// Recall metrics after reranking with `beta`; `beta = 1` is the plain ranking.
    pub fn metrics(&self, beta: f64) -> Result<Metrics> {
        let scores = rerank_matrix(&self.scores, &self.minimums, beta)?;
        evaluate(&scores, &self.image_ids, &self.caption_ids, &self.pairs)
    }

    pub fn baseline(&self) -> Result<Metrics> {
        evaluate(&self.scores, &self.image_ids, &self.caption_ids, &self.pairs)
    }

    pub fn select_beta(&self, grid: &[f64]) -> Result<(f64, Metrics)> {
        select_beta(&self.scores, &self.minimums, &self.image_ids, &self.caption_ids, &self.pairs, grid)
    }
}

/// Positional ids `img000000`, `cap000000`, ... for datasets without names.
pub fn positional_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:06}")).collect()
}

/// Embeds every image and caption of `dataset` and scores them.
pub fn score_dataset(params: &ModelParams, dataset: &Dataset) -> Result<ScoredSplit> {
    dataset.validate()?;
    let images = embed_images(params, &dataset.images, &positional_ids("img", dataset.images.len()))?;
    let captions = embed_captions(params, &dataset.captions, &positional_ids("cap", dataset.captions.len()))?;
    ScoredSplit::new(&images, &captions, dataset.pairs.clone())
}

/// Unit vector of an index row, widened back to 64 bits.
pub fn row_vector(idx: &EmbeddingIndex, i: usize) -> DenseVector {
    DenseVector::new(idx.row(i).iter().map(|&x| x as f64).collect()).expect("index rows are finite")
}
