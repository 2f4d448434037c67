//! Text-side augmentation: graph subsampling and token masking.

use std::collections::HashSet;

use rand::Rng;

use super::graph::SceneGraph;
use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "<mask>";

/// Randomly drops attributes, relations and objects.
///
/// Each attribute node is dropped with probability `node_drop`, each
/// relation with `edge_drop`. Objects are dropped with `node_drop` but the
/// last remaining object is always kept; dropping an object removes its
/// relations and any attribute left without an edge.
pub fn subsample_graph(g: &SceneGraph, node_drop: f64, edge_drop: f64, rng: &mut impl Rng) -> SceneGraph {
    if g.objects.is_empty() {
        return g.clone();
    }
    let mut objects = g.objects.clone();
    let mut k = 0;
    while k < objects.len() {
        if objects.len() > 1 && rng.random::<f64>() < node_drop {
            objects.remove(k);
        } else {
            k += 1;
        }
    }
    let kept_objects: HashSet<u32> = objects.iter().map(|o| o.id).collect();

    let kept_attrs: HashSet<u32> = g
        .attributes
        .iter()
        .filter(|_| !(rng.random::<f64>() < node_drop))
        .map(|a| a.id)
        .collect();
    let oa_edges: Vec<(u32, u32)> = g
        .oa_edges
        .iter()
        .copied()
        .filter(|(a, o)| kept_attrs.contains(a) && kept_objects.contains(o))
        .collect();
    let attached: HashSet<u32> = oa_edges.iter().map(|(a, _)| *a).collect();
    let attributes = g
        .attributes
        .iter()
        .filter(|a| attached.contains(&a.id))
        .cloned()
        .collect();

    let oo_edges = g
        .oo_edges
        .iter()
        .filter(|_| !(rng.random::<f64>() < edge_drop))
        .filter(|r| kept_objects.contains(&r.subject) && kept_objects.contains(&r.object))
        .cloned()
        .collect();

    SceneGraph {
        objects,
        attributes,
        oa_edges,
        oo_edges,
        fallback: g.fallback.clone(),
    }
}

/// Replaces tokens by [`MASK_TOKEN`] independently with probability `rate`,
/// keeping the last token if every token was selected.
pub fn mask_tokens(phrase: &[String], rate: f64, rng: &mut impl Rng) -> Result<Vec<String>> {
    if phrase.is_empty() {
        return Err(Error::Empty("phrase to mask"));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("mask rate {rate} outside [0,1)")));
    }
    let mask: Vec<bool> = phrase.iter().map(|_| rng.random::<f64>() < rate).collect();
    let all = mask.iter().all(|&m| m);
    Ok(phrase
        .iter()
        .zip(&mask)
        .enumerate()
        .map(|(i, (tok, &m))| {
            if m && !(all && i + 1 == phrase.len()) {
                MASK_TOKEN.to_string()
            } else {
                tok.clone()
            }
        })
        .collect())
}
