//! Synthetic image-caption data with a known concept structure.
//!
//! Every image is a bag of regions, each a noisy copy of one concept
//! prototype, optionally shifted by an attribute prototype. Its caption is
//! a scene graph naming exactly those concepts.

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoders::REGION_DIM;
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;
use crate::sgparse::{ConceptNode, Relation, SceneGraph};

use super::data::Dataset;

pub const CONCEPTS: [&str; 20] = [
    "man", "dog", "cup", "table", "tree", "car", "ball", "hat", "bench", "bird", "horse", "boat", "kite", "flag",
    "bike", "lamp", "chair", "door", "shirt", "cake",
];
pub const ATTRIBUTES: [&str; 8] = ["red", "small", "wooden", "tall", "blue", "old", "striped", "shiny"];
pub const RELATIONS: [&str; 6] = ["on", "near", "hold", "above", "behind", "under"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub region_dim: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Standard deviation of per-region noise.
    pub noise: f64,
    /// Weight of the attribute prototype added to a region.
    pub attribute_weight: f64,
    /// Chance that an object carries an attribute, and that the caption mentions it.
    pub attribute_prob: f64,
    pub max_relations: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            region_dim: REGION_DIM,
            min_objects: 4,
            max_objects: 8,
            noise: 0.5,
            attribute_weight: 0.5,
            attribute_prob: 0.3,
            max_relations: 1,
        }
    }
}

/// Fixed prototypes shared by every split drawn from one world.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub concepts: Vec<Vec<f64>>,
    pub attributes: Vec<Vec<f64>>,
}

fn gaussian(dim: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

impl SynthWorld {
    pub fn new(config: SynthConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.min_objects < 2 || config.min_objects > config.max_objects || config.max_objects > CONCEPTS.len() {
            return Err(Error::invalid(format!(
                "object range {}..={} must lie within 2..={}",
                config.min_objects,
                config.max_objects,
                CONCEPTS.len()
            )));
        }
        if config.max_relations == 0 {
            return Err(Error::invalid("captions need at least one relation"));
        }
        let concepts = (0..CONCEPTS.len()).map(|_| gaussian(config.region_dim, 1.0, rng)).collect();
        let attributes = (0..ATTRIBUTES.len()).map(|_| gaussian(config.region_dim, 1.0, rng)).collect();
        Ok(Self {
            config,
            concepts,
            attributes,
        })
    }

    /// One image and its caption.
    pub fn sample(&self, rng: &mut impl Rng) -> (DenseMatrix, SceneGraph) {
        let c = &self.config;
        let k = rng.random_range(c.min_objects..=c.max_objects);
        let mut picked = index::sample(rng, CONCEPTS.len(), k).into_vec();
        picked.shuffle(rng);
        let attrs: Vec<Option<usize>> = picked
            .iter()
            .map(|_| rng.random_bool(c.attribute_prob).then(|| rng.random_range(0..ATTRIBUTES.len())))
            .collect();

        let mut rows: Vec<Vec<f64>> = picked
            .iter()
            .zip(&attrs)
            .map(|(&p, a)| {
                let mut r = gaussian(c.region_dim, c.noise, rng);
                for (x, y) in r.iter_mut().zip(&self.concepts[p]) {
                    *x += y;
                }
                if let Some(a) = a {
                    for (x, y) in r.iter_mut().zip(&self.attributes[*a]) {
                        *x += c.attribute_weight * y;
                    }
                }
                r
            })
            .collect();
        rows.shuffle(rng);
        let image = DenseMatrix::from_rows(&rows).expect("rows share one width");

        let objects: Vec<ConceptNode> = picked
            .iter()
            .enumerate()
            .map(|(i, &p)| ConceptNode {
                id: i as u32,
                phrase: CONCEPTS[p].to_string(),
            })
            .collect();
        let mut attributes = Vec::new();
        let mut oa_edges = Vec::new();
        for (i, a) in attrs.iter().enumerate() {
            if let Some(a) = a {
                if rng.random_bool(c.attribute_prob) {
                    let id = (k + attributes.len()) as u32;
                    attributes.push(ConceptNode {
                        id,
                        phrase: ATTRIBUTES[*a].to_string(),
                    });
                    oa_edges.push((id, i as u32));
                }
            }
        }
        let n_rel = rng.random_range(1..=c.max_relations);
        let oo_edges = (0..n_rel)
            .map(|_| {
                let pair = index::sample(rng, k, 2);
                Relation {
                    subject: pair.index(0) as u32,
                    relation: RELATIONS.choose(rng).unwrap().to_string(),
                    object: pair.index(1) as u32,
                }
            })
            .collect();
        let graph = SceneGraph {
            objects,
            attributes,
            oa_edges,
            oo_edges,
            fallback: None,
        };
        (image, graph)
    }

    /// `n` aligned pairs, image `i` matching caption `i`.
    pub fn dataset(&self, n: usize, rng: &mut impl Rng) -> Dataset {
        let (images, captions) = (0..n).map(|_| self.sample(rng)).unzip();
        Dataset {
            images,
            captions,
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }
}
