use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoders::{augment_regions, Vocab};
use crate::error::{Error, Result};
use crate::graphnet::TokenizedGraph;
use crate::numcore::{DenseMatrix, Segment};
use crate::sgparse::{subsample_graph, SceneGraph};

use super::config::TrainConfig;

/// Images, captions and the `(image, caption)` pairs that match.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<DenseMatrix>,
    pub captions: Vec<SceneGraph>,
    pub pairs: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for &(i, c) in &self.pairs {
            if i >= self.images.len() || c >= self.captions.len() {
                return Err(Error::invalid(format!("pair ({i}, {c}) out of range")));
            }
        }
        if let Some(k) = self.images.iter().position(|m| m.rows() == 0) {
            return Err(Error::invalid(format!("image {k} has no regions")));
        }
        for g in &self.captions {
            g.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sorted set of every token in every caption.
    pub fn vocab(&self) -> Vocab {
        let mut words: Vec<String> = self
            .captions
            .iter()
            .flat_map(|g| {
                g.objects
                    .iter()
                    .chain(&g.attributes)
                    .map(|n| n.phrase.as_str())
                    .chain(g.oo_edges.iter().map(|r| r.relation.as_str()))
                    .chain(g.fallback.as_deref())
                    .flat_map(str::split_whitespace)
                    .map(String::from)
                    .collect::<Vec<_>>()
            })
            .collect();
        words.sort();
        words.dedup();
        Vocab::from_tokens(words)
    }
}

/// Model-ready inputs for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    /// Region rows of all images, stacked in batch order.
    pub regions: DenseMatrix,
    pub segments: Vec<Segment>,
    pub graphs: Vec<TokenizedGraph>,
    /// Dataset pair indices, in batch order.
    pub pairs: Vec<usize>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Builds a batch from explicit images and graphs without augmentation.
    pub fn new(images: &[&DenseMatrix], graphs: &[&SceneGraph], vocab: &Vocab) -> Result<Self> {
        if images.len() != graphs.len() {
            return Err(Error::shape(format!("{} images for {} captions", images.len(), graphs.len())));
        }
        let graphs = graphs.iter().map(|g| TokenizedGraph::new(g, vocab)).collect::<Result<_>>()?;
        let (regions, segments) = stack(images.iter().copied())?;
        Ok(Self {
            regions,
            segments,
            graphs,
            pairs: (0..images.len()).collect(),
        })
    }
}

fn stack<'a>(images: impl Iterator<Item = &'a DenseMatrix>) -> Result<(DenseMatrix, Vec<Segment>)> {
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut segments = Vec::new();
    for m in images {
        segments.push(Segment {
            start: rows.len(),
            len: m.rows(),
        });
        rows.extend(m.iter_rows());
    }
    Ok((DenseMatrix::from_rows(&rows)?, segments))
}

/// Shuffles the pairs into full batches and applies the augmentations.
///
/// `sampler` decides batch composition and `augment` drives region
/// dropout, graph subsampling and token masking, so either can change
/// without perturbing the other.
pub fn make_batches(
    dataset: &Dataset,
    vocab: &Vocab,
    cfg: &TrainConfig,
    sampler: &mut impl Rng,
    augment: &mut impl Rng,
) -> Result<Vec<TrainBatch>> {
    if dataset.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "dataset of {} pairs is smaller than one batch of {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(sampler);
    order
        .chunks_exact(cfg.batch_size)
        .map(|chunk| {
            let mut images = Vec::with_capacity(chunk.len());
            let mut graphs = Vec::with_capacity(chunk.len());
            for &p in chunk {
                let (i, c) = dataset.pairs[p];
                images.push(augment_regions(&dataset.images[i], cfg.region_drop, augment)?);
                let g = subsample_graph(&dataset.captions[c], cfg.graph_drop, cfg.graph_drop, augment);
                graphs.push(TokenizedGraph::masked(&g, vocab, cfg.token_mask, augment)?);
            }
            let (regions, segments) = stack(images.iter())?;
            Ok(TrainBatch {
                regions,
                segments,
                graphs,
                pairs: chunk.to_vec(),
            })
        })
        .collect()
}
