//! Independent dense oracles and random fixtures shared by the test targets.
#![allow(dead_code)]

use cora::graphnet::GatLayerParams;
use cora::numcore::{DenseMatrix, DenseVector};
use cora::sgparse::{ConceptNode, Relation, SceneGraph};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Attention coefficients of node `i`, recomputed from the definition.
pub fn dense_alpha(h: &DenseMatrix, nbrs: &[usize], i: usize, p: &GatLayerParams) -> Vec<f64> {
    let d = h.cols();
    let scores: Vec<f64> = nbrs
        .iter()
        .map(|&j| {
            (0..d)
                .map(|r| {
                    let mut z = 0.0;
                    for c in 0..d {
                        z += p.w.get(r, c) * h.get(i, c) + p.w.get(r, d + c) * h.get(j, c);
                    }
                    p.a[r] * leaky(z, p.slope)
                })
                .sum()
        })
        .collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
    scores.iter().map(|s| (s - mx).exp() / total).collect()
}

/// One GAT layer evaluated node by node.
pub fn dense_gat(h: &DenseMatrix, adjacency: &[Vec<usize>], p: &GatLayerParams) -> DenseMatrix {
    let (n, d) = h.shape();
    let mut out = DenseMatrix::zeros(n, d);
    for i in 0..n {
        let nbrs = if adjacency[i].is_empty() { vec![i] } else { adjacency[i].clone() };
        let alpha = dense_alpha(h, &nbrs, i, p);
        for r in 0..d {
            let mut acc = 0.0;
            for (k, &j) in nbrs.iter().enumerate() {
                let msg: f64 = (0..d).map(|c| p.w.get(r, d + c) * h.get(j, c)).sum();
                acc += alpha[k] * msg;
            }
            out.set(i, r, acc.max(0.0));
        }
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn random_vectors(n: usize, d: usize, rng: &mut impl Rng) -> Vec<DenseVector> {
    (0..n).map(|_| DenseVector::random_normal(d, 1.0, rng)).collect()
}

pub const WORDS: [&str; 12] = [
    "man", "cup", "dog", "table", "red", "small", "hold", "on", "wooden", "near", "tall", "ball",
];

fn phrase(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=2);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random valid scene graph with ids `0..objects` for objects.
pub fn random_graph(rng: &mut impl Rng, objects: usize, attributes: usize, relations: usize) -> SceneGraph {
    let objs: Vec<ConceptNode> = (0..objects as u32)
        .map(|id| ConceptNode { id, phrase: phrase(rng) })
        .collect();
    let attrs: Vec<ConceptNode> = (0..attributes as u32)
        .map(|k| ConceptNode {
            id: objects as u32 + k,
            phrase: phrase(rng),
        })
        .collect();
    let oa_edges = attrs
        .iter()
        .map(|a| (a.id, rng.random_range(0..objects as u32)))
        .collect();
    let mut oo_edges: Vec<Relation> = Vec::new();
    if objects >= 2 {
        for _ in 0..relations {
            let s = rng.random_range(0..objects as u32);
            let mut o = rng.random_range(0..objects as u32 - 1);
            if o >= s {
                o += 1;
            }
            oo_edges.push(Relation {
                subject: s,
                relation: phrase(rng),
                object: o,
            });
        }
    }
    SceneGraph {
        objects: objs,
        attributes: attrs,
        oa_edges,
        oo_edges,
        fallback: None,
    }
}

/// Renames every node id through a random injective map and shuffles the
/// object, attribute and edge lists.
pub fn relabel(g: &SceneGraph, rng: &mut impl Rng) -> (SceneGraph, Vec<(u32, u32)>) {
    let n = g.objects.len() + g.attributes.len();
    let mut fresh: Vec<u32> = (100..100 + 3 * n as u32).collect();
    fresh.shuffle(rng);
    let old: Vec<u32> = g.objects.iter().chain(&g.attributes).map(|x| x.id).collect();
    let map: Vec<(u32, u32)> = old.iter().copied().zip(fresh).collect();
    let m = |id: u32| map.iter().find(|(o, _)| *o == id).unwrap().1;
    let mut out = SceneGraph {
        objects: g
            .objects
            .iter()
            .map(|o| ConceptNode {
                id: m(o.id),
                phrase: o.phrase.clone(),
            })
            .collect(),
        attributes: g
            .attributes
            .iter()
            .map(|a| ConceptNode {
                id: m(a.id),
                phrase: a.phrase.clone(),
            })
            .collect(),
        oa_edges: g.oa_edges.iter().map(|&(a, o)| (m(a), m(o))).collect(),
        oo_edges: g
            .oo_edges
            .iter()
            .map(|r| Relation {
                subject: m(r.subject),
                relation: r.relation.clone(),
                object: m(r.object),
            })
            .collect(),
        fallback: g.fallback.clone(),
    };
    out.objects.shuffle(rng);
    out.attributes.shuffle(rng);
    out.oa_edges.shuffle(rng);
    out.oo_edges.shuffle(rng);
    (out, map)
}

/// Loss inputs as plain vectors: images, captions, `(caption, entity)`.
pub struct PlainBatch {
    pub images: Vec<Vec<f64>>,
    pub captions: Vec<Vec<f64>>,
    pub entities: Vec<(usize, Vec<f64>)>,
}

impl PlainBatch {
    pub fn random(rng: &mut impl Rng, n: usize, max_entities: usize, d: usize) -> Self {
        let v = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let images = (0..n).map(|_| v(rng)).collect();
        let captions = (0..n).map(|_| v(rng)).collect();
        let mut entities = Vec::new();
        for i in 0..n {
            for _ in 0..rng.random_range(0..=max_entities) {
                entities.push((i, v(rng)));
            }
        }
        Self {
            images,
            captions,
            entities,
        }
    }

    pub fn to_batch(&self, config: cora::losses::LossConfig) -> cora::losses::BatchEmbeddings {
        cora::losses::BatchEmbeddings {
            images: DenseMatrix::from_rows(&self.images).unwrap(),
            captions: DenseMatrix::from_rows(&self.captions).unwrap(),
            entities: self
                .entities
                .iter()
                .map(|(o, e)| (*o, DenseVector::new(e.clone()).unwrap()))
                .collect(),
            config,
        }
    }

    fn units_of(&self, i: usize) -> Vec<&Vec<f64>> {
        std::iter::once(&self.captions[i])
            .chain(self.entities.iter().filter(|(o, _)| *o == i).map(|(_, e)| e))
            .collect()
    }

    /// Exhaustive scan over all pairs, taking the largest negative hinge.
    pub fn triplet_oracle(&self, margin: f64) -> f64 {
        let n = self.images.len();
        let mut total = 0.0;
        for i in 0..n {
            let pos = cosine(&self.images[i], &self.captions[i]);
            let mut worst_t: f64 = 0.0;
            let mut worst_v: f64 = 0.0;
            for j in 0..n {
                if j != i {
                    worst_t = worst_t.max(margin + cosine(&self.images[i], &self.captions[j]) - pos);
                    worst_v = worst_v.max(margin + cosine(&self.images[j], &self.captions[i]) - pos);
                }
            }
            total += worst_t + worst_v;
        }
        total
    }

    /// Enumerates every denominator set explicitly.
    pub fn contrastive_oracle(&self, tau: f64) -> f64 {
        let n = self.images.len();
        let mut total = 0.0;
        for i in 0..n {
            let others: Vec<&Vec<f64>> = (0..n).filter(|&k| k != i).flat_map(|k| self.units_of(k)).collect();
            for u in self.units_of(i) {
                let num = (cosine(&self.images[i], u) / tau).exp();
                let den1 = num + others.iter().map(|w| (cosine(&self.images[i], w) / tau).exp()).sum::<f64>();
                let den2 = num
                    + (0..n)
                        .filter(|&k| k != i)
                        .map(|k| (cosine(&self.images[k], u) / tau).exp())
                        .sum::<f64>();
                total -= (num / den1).ln() + (num / den2).ln();
            }
        }
        total
    }

    pub fn specificity_oracle(&self, margin: f64) -> f64 {
        self.entities
            .iter()
            .map(|(i, e)| {
                let h = margin + cosine(&self.images[*i], e) - cosine(&self.images[*i], &self.captions[*i]);
                h.max(0.0)
            })
            .sum()
    }
}

/// `|a − b| ≤ tol · max(1, |b|)`
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
