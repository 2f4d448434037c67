use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::gat::{gat_forward, GatLayerParams, GatVars};
use crate::encoders::{encode_phrases, instrument, ConceptEncoderParams, ConceptVars, PoolParams, Vocab, UNK};
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, DenseVector, Segment, Tape, Var};
use crate::sgparse::{mask_tokens, SceneGraph};

/// Object-attribute GAT stack, edge projections and the pooling head.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoderParams {
    pub oa_layers: Vec<GatLayerParams>,
    pub oo_layers: Vec<GatLayerParams>,
    /// `2D × D`, applied to edges where the node is the subject
    pub w_active: DenseMatrix,
    /// `2D × D`, applied to edges where the node is the object
    pub w_passive: DenseMatrix,
    pub pool: PoolParams,
}

impl SceneEncoderParams {
    pub fn init(dim: usize, oa: usize, oo: usize, max_rank: usize, rng: &mut impl Rng) -> Self {
        let oa_layers = (0..oa).map(|_| GatLayerParams::init(dim, rng)).collect();
        let oo_layers = (0..oo).map(|_| GatLayerParams::init(dim, rng)).collect();
        let s = (1.0 / (2 * dim) as f64).sqrt();
        Self {
            oa_layers,
            oo_layers,
            w_active: DenseMatrix::random_normal(2 * dim, dim, s, rng),
            w_passive: DenseMatrix::random_normal(2 * dim, dim, s, rng),
            pool: PoolParams::new(max_rank),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_active.cols()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let d = self.dim();
        if self.oa_layers.is_empty() || self.oo_layers.is_empty() {
            return Err(Error::invalid("both GAT stacks need at least one layer"));
        }
        for layer in self.oa_layers.iter().chain(&self.oo_layers) {
            layer.check()?;
            if layer.dim() != d {
                return Err(Error::shape(format!("GAT layer of dim {} in a D = {d} encoder", layer.dim())));
            }
        }
        if self.w_active.shape() != (2 * d, d) || self.w_passive.shape() != (2 * d, d) {
            return Err(Error::shape("edge projections must be 2D × D"));
        }
        Ok(())
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> SceneVars {
        let d = self.dim();
        let oa = self.oa_layers.iter().map(|l| l.bind(tape, trainable)).collect();
        let oo = self.oo_layers.iter().map(|l| l.bind(tape, trainable)).collect();
        let mut leaf = |data: &'a [f64], r, c| {
            if trainable {
                tape.param(r, c, data)
            } else {
                tape.constant(r, c, data)
            }
        };
        SceneVars {
            oa,
            oo,
            w_active: leaf(self.w_active.as_slice(), 2 * d, d),
            w_passive: leaf(self.w_passive.as_slice(), 2 * d, d),
            rank_logits: leaf(self.pool.rank_logits.as_slice(), self.pool.max_rank(), 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneVars {
    pub oa: Vec<GatVars>,
    pub oo: Vec<GatVars>,
    pub w_active: Var,
    pub w_passive: Var,
    pub rank_logits: Var,
}

/// Caption embedding plus the per-object entity embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEncoding {
    pub t: DenseVector,
    pub entities: Vec<(u32, DenseVector)>,
}

/// Scene graph with every phrase resolved to vocabulary rows and every
/// node referred to by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedGraph {
    pub object_ids: Vec<u32>,
    pub objects: Vec<Vec<usize>>,
    pub attributes: Vec<Vec<usize>>,
    /// `(attribute position, object position)`
    pub oa_edges: Vec<(usize, usize)>,
    /// `(subject position, relation tokens, object position)`
    pub relations: Vec<(usize, Vec<usize>, usize)>,
    /// Whole-caption phrase when there are no objects, `<unk>` if the
    /// caption has no usable text; empty otherwise.
    pub fallback: Vec<usize>,
}

impl TokenizedGraph {
    pub fn new(g: &SceneGraph, vocab: &Vocab) -> Result<Self> {
        Self::build(g, &mut |p| Ok(vocab.encode_phrase(p)))
    }

    /// Tokenizes with each token replaced by `<mask>` at `rate`.
    pub fn masked(g: &SceneGraph, vocab: &Vocab, rate: f64, rng: &mut impl Rng) -> Result<Self> {
        Self::build(g, &mut |p| {
            let words: Vec<String> = p.split_whitespace().map(String::from).collect();
            Ok(vocab.encode(&mask_tokens(&words, rate, rng)?))
        })
    }

    fn build(g: &SceneGraph, tok: &mut dyn FnMut(&str) -> Result<Vec<usize>>) -> Result<Self> {
        g.validate()?;
        let objects = g.objects.iter().map(|o| tok(&o.phrase)).collect::<Result<_>>()?;
        let attributes = g.attributes.iter().map(|a| tok(&a.phrase)).collect::<Result<_>>()?;
        let opos = g.object_positions();
        let apos = g.attribute_positions();
        let oa_edges = g.oa_edges.iter().map(|(a, o)| (apos[a], opos[o])).collect();
        let relations = g
            .oo_edges
            .iter()
            .map(|r| Ok((opos[&r.subject], tok(&r.relation)?, opos[&r.object])))
            .collect::<Result<_>>()?;
        let fallback = if !g.objects.is_empty() {
            Vec::new()
        } else {
            match g.fallback.as_deref() {
                Some(text) if text.split_whitespace().next().is_some() => tok(text)?,
                _ => vec![UNK],
            }
        };
        Ok(Self {
            object_ids: g.objects.iter().map(|o| o.id).collect(),
            objects,
            attributes,
            oa_edges,
            relations,
            fallback,
        })
    }
}

/// Tape nodes produced by encoding a batch of captions.
#[derive(Debug, Clone)]
pub struct CaptionBatch {
    /// `B × D`, one row per caption in input order
    pub captions: Var,
    /// `M × D` entity embeddings of all objects, or `None` if no caption has one
    pub entities: Option<Var>,
    pub entity_owner: Vec<usize>,
    pub entity_ids: Vec<u32>,
}

pub(crate) fn mean_weights(index: &[usize], rows: usize) -> Vec<f64> {
    let mut count = vec![0usize; rows];
    for &i in index {
        count[i] += 1;
    }
    index.iter().map(|&i| 1.0 / count[i] as f64).collect()
}

/// Adds the mean projected edge features of each node's active and passive
/// relations. Edge `k` runs from `subj[k]` to `obj[k]` with relation row `k`
/// of `rel`.
pub(crate) fn contextualize_record(
    tape: &mut Tape<'_>,
    e: Var,
    rel: Var,
    subj: &[usize],
    obj: &[usize],
    w_active: Var,
    w_passive: Var,
) -> Var {
    let (m, _) = tape.shape(e);
    let passive_entity = tape.gather_rows(e, obj);
    let feats = tape.concat_cols(&[rel, passive_entity]);
    let act = tape.matmul(feats, w_active);
    let pas = tape.matmul(feats, w_passive);
    let act = tape.scatter_rows(act, subj, Some(&mean_weights(subj, m)), m);
    let pas = tape.scatter_rows(pas, obj, Some(&mean_weights(obj, m)), m);
    let out = tape.add(e, act);
    tape.add(out, pas)
}

fn oo_adjacency(m: usize, subj: &[usize], obj: &[usize]) -> Vec<Vec<usize>> {
    let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); m];
    for (&s, &o) in subj.iter().zip(obj) {
        nbrs[s].insert(o);
        nbrs[o].insert(s);
    }
    nbrs.into_iter()
        .enumerate()
        .map(|(i, set)| std::iter::once(i).chain(set.into_iter().filter(|&j| j != i)).collect())
        .collect()
}

/// Encodes a batch of captions as one disjoint union of graphs.
pub fn encode_graph_batch(
    tape: &mut Tape<'_>,
    concept: ConceptVars,
    scene: &SceneVars,
    max_rank: usize,
    graphs: &[&TokenizedGraph],
) -> Result<CaptionBatch> {
    if graphs.is_empty() {
        return Err(Error::Empty("caption batch"));
    }
    let mut phrases: Vec<Vec<usize>> = Vec::new();
    let mut node_phrase = Vec::new();
    let mut oa_adj: Vec<Vec<usize>> = Vec::new();
    let mut entity_nodes = Vec::new();
    let mut entity_owner = Vec::new();
    let mut entity_ids = Vec::new();
    let (mut rel_phrase, mut rel_subj, mut rel_obj) = (Vec::new(), Vec::new(), Vec::new());
    let mut segments = Vec::new();
    let mut fallback_phrase = Vec::new();
    // per caption: row in the pooled block, or in the fallback block
    let mut slot: Vec<Result<usize, usize>> = Vec::with_capacity(graphs.len());

    for (b, g) in graphs.iter().enumerate() {
        if g.objects.is_empty() {
            slot.push(Err(fallback_phrase.len()));
            fallback_phrase.push(phrases.len());
            phrases.push(g.fallback.clone());
            continue;
        }
        if g.objects.len() > max_rank {
            return Err(Error::invalid(format!(
                "caption {b} has {} objects, pooling supports {max_rank}",
                g.objects.len()
            )));
        }
        let node_base = node_phrase.len();
        let ent_base = entity_nodes.len();
        let n_obj = g.objects.len();
        for (i, obj) in g.objects.iter().enumerate() {
            node_phrase.push(phrases.len());
            phrases.push(obj.clone());
            oa_adj.push(vec![node_base + i]);
            entity_nodes.push(node_base + i);
            entity_owner.push(b);
            entity_ids.push(g.object_ids[i]);
        }
        for attr in &g.attributes {
            node_phrase.push(phrases.len());
            phrases.push(attr.clone());
            oa_adj.push(Vec::new());
        }
        for &(a, o) in &g.oa_edges {
            let node = node_base + n_obj + a;
            if !oa_adj[node_base + o].contains(&node) {
                oa_adj[node_base + o].push(node);
            }
        }
        for (s, r, o) in &g.relations {
            rel_phrase.push(phrases.len());
            phrases.push(r.clone());
            rel_subj.push(ent_base + s);
            rel_obj.push(ent_base + o);
        }
        slot.push(Ok(segments.len()));
        segments.push(Segment {
            start: ent_base,
            len: n_obj,
        });
    }

    let p = encode_phrases(tape, concept, &phrases);
    let mut blocks = Vec::new();
    let mut entities = None;
    if !entity_nodes.is_empty() {
        let mut h = tape.gather_rows(p, &node_phrase);
        for &layer in &scene.oa {
            h = gat_forward(tape, layer, h, &oa_adj);
        }
        let e = tape.gather_rows(h, &entity_nodes);
        let mut x = if rel_phrase.is_empty() {
            e
        } else {
            let rel = tape.gather_rows(p, &rel_phrase);
            contextualize_record(tape, e, rel, &rel_subj, &rel_obj, scene.w_active, scene.w_passive)
        };
        let adj = oo_adjacency(entity_nodes.len(), &rel_subj, &rel_obj);
        for &layer in &scene.oo {
            x = gat_forward(tape, layer, x, &adj);
        }
        blocks.push(tape.sort_pool(x, scene.rank_logits, &segments));
        entities = Some(e);
    }
    if !fallback_phrase.is_empty() {
        blocks.push(tape.gather_rows(p, &fallback_phrase));
    }
    let pooled_rows = segments.len();
    let order: Vec<usize> = slot
        .iter()
        .map(|s| match *s {
            Ok(i) => i,
            Err(i) => pooled_rows + i,
        })
        .collect();
    let stacked = if blocks.len() == 1 { blocks[0] } else { tape.concat_rows(&blocks) };
    let identity = order.iter().enumerate().all(|(i, &j)| i == j);
    let captions = if identity { stacked } else { tape.gather_rows(stacked, &order) };
    Ok(CaptionBatch {
        captions,
        entities,
        entity_owner,
        entity_ids,
    })
}

fn check_params(concept: &ConceptEncoderParams, scene: &SceneEncoderParams) -> Result<()> {
    concept.check()?;
    scene.check()?;
    if concept.dim() != scene.dim() {
        return Err(Error::shape(format!(
            "concept encoder D = {} but scene encoder D = {}",
            concept.dim(),
            scene.dim()
        )));
    }
    Ok(())
}

/// Encodes many captions, batching the graph computation.
pub fn encode_captions(
    graphs: &[SceneGraph],
    concept: &ConceptEncoderParams,
    scene: &SceneEncoderParams,
) -> Result<Vec<CaptionEncoding>> {
    check_params(concept, scene)?;
    let tokenized = graphs
        .iter()
        .map(|g| TokenizedGraph::new(g, &concept.vocab))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in tokenized.chunks(256) {
        instrument::record_captions(chunk.len() as u64);
        let refs: Vec<&TokenizedGraph> = chunk.iter().collect();
        let mut tape = Tape::new();
        let cv = concept.bind(&mut tape, false);
        let sv = scene.bind(&mut tape, false);
        let batch = encode_graph_batch(&mut tape, cv, &sv, scene.pool.max_rank(), &refs)?;
        let t = tape.view(batch.captions);
        let mut encodings: Vec<CaptionEncoding> = (0..chunk.len())
            .map(|i| CaptionEncoding {
                t: DenseVector::from_raw(t.row(i).to_vec()),
                entities: Vec::new(),
            })
            .collect();
        if let Some(e) = batch.entities {
            let e = tape.view(e);
            for (k, (&owner, &id)) in batch.entity_owner.iter().zip(&batch.entity_ids).enumerate() {
                encodings[owner]
                    .entities
                    .push((id, DenseVector::from_raw(e.row(k).to_vec())));
            }
        }
        out.extend(encodings);
    }
    Ok(out)
}

/// Encodes one caption graph into `t` and its entities.
pub fn encode_caption(
    g: &SceneGraph,
    concept: &ConceptEncoderParams,
    scene: &SceneEncoderParams,
) -> Result<CaptionEncoding> {
    Ok(encode_captions(std::slice::from_ref(g), concept, scene)?.remove(0))
}

/// Runs the object-attribute GAT stack and returns the object features.
pub fn obj_att_gat(
    g: &SceneGraph,
    node_feats: &HashMap<u32, DenseVector>,
    p: &SceneEncoderParams,
) -> Result<Vec<(u32, DenseVector)>> {
    p.check()?;
    g.validate()?;
    if g.objects.is_empty() {
        return Err(Error::Empty("objects"));
    }
    let d = p.dim();
    let nodes: Vec<u32> = g.objects.iter().chain(&g.attributes).map(|n| n.id).collect();
    let mut data = Vec::with_capacity(nodes.len() * d);
    for id in &nodes {
        let f = node_feats
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no features for node {id}")))?;
        if f.dim() != d {
            return Err(Error::shape(format!("node {id} features have dim {}", f.dim())));
        }
        data.extend_from_slice(f.as_slice());
    }
    let n_obj = g.objects.len();
    let pos: HashMap<u32, usize> = nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut adj: Vec<Vec<usize>> = (0..nodes.len())
        .map(|i| if i < n_obj { vec![i] } else { Vec::new() })
        .collect();
    for (a, o) in &g.oa_edges {
        let (a, o) = (pos[a], pos[o]);
        if !adj[o].contains(&a) {
            adj[o].push(a);
        }
    }
    let mut tape = Tape::new();
    let layers: Vec<GatVars> = p.oa_layers.iter().map(|l| l.bind(&mut tape, false)).collect();
    let mut h = tape.constant_owned(nodes.len(), d, data);
    for layer in layers {
        h = gat_forward(&mut tape, layer, h, &adj);
    }
    let out = tape.view(h);
    Ok(g.objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id, DenseVector::from_raw(out.row(i).to_vec())))
        .collect())
}

/// Relation feature `[r ‖ e_object]`.
pub fn edge_feature(r: &DenseVector, e: &DenseVector) -> DenseVector {
    let mut v = r.as_slice().to_vec();
    v.extend_from_slice(e.as_slice());
    DenseVector::from_raw(v)
}

/// Adds to each entity the mean of `W_A`-projected features of the edges it
/// starts and the mean of `W_P`-projected features of the edges it ends.
/// `oo_edges[k] = (subject, object)` index into `entities`, with relation
/// feature `relation_feats[k]`.
pub fn contextualize_entities(
    entities: &[DenseVector],
    oo_edges: &[(usize, usize)],
    relation_feats: &[DenseVector],
    w_active: &DenseMatrix,
    w_passive: &DenseMatrix,
) -> Result<Vec<DenseVector>> {
    if oo_edges.len() != relation_feats.len() {
        return Err(Error::shape(format!(
            "{} edges but {} relation features",
            oo_edges.len(),
            relation_feats.len()
        )));
    }
    if entities.is_empty() {
        return Ok(Vec::new());
    }
    let d = entities[0].dim();
    if entities.iter().chain(relation_feats).any(|v| v.dim() != d) {
        return Err(Error::shape("entity and relation dims differ"));
    }
    if w_active.shape() != (2 * d, d) || w_passive.shape() != (2 * d, d) {
        return Err(Error::shape("edge projections must be 2D × D"));
    }
    if oo_edges.iter().any(|&(s, o)| s >= entities.len() || o >= entities.len()) {
        return Err(Error::invalid("edge refers to a missing entity"));
    }
    if oo_edges.is_empty() {
        return Ok(entities.to_vec());
    }
    let stack = |vs: &[DenseVector]| vs.iter().flat_map(|v| v.as_slice().iter().copied()).collect::<Vec<_>>();
    let mut tape = Tape::new();
    let e = tape.constant_owned(entities.len(), d, stack(entities));
    let r = tape.constant_owned(relation_feats.len(), d, stack(relation_feats));
    let wa = tape.matrix_constant(w_active);
    let wp = tape.matrix_constant(w_passive);
    let (subj, obj): (Vec<usize>, Vec<usize>) = oo_edges.iter().copied().unzip();
    let out = contextualize_record(&mut tape, e, r, &subj, &obj, wa, wp);
    let v = tape.view(out);
    Ok((0..entities.len()).map(|i| DenseVector::from_raw(v.row(i).to_vec())).collect())
}
