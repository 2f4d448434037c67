use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::{
    encode_image, encode_region_sets, ConceptEncoderParams, ConceptVars, VisualEncoderParams, VisualVars, Vocab,
    DEFAULT_HEADS, DEFAULT_MAX_RANK, REGION_DIM, WORD_DIM,
};
use crate::error::{Error, Result};
use crate::graphnet::{encode_caption, encode_captions, encode_graph_batch, CaptionEncoding, SceneEncoderParams, SceneVars};
use crate::losses::{total_loss_on_tape, LossComponents, LossConfig};
use crate::numcore::{DenseMatrix, DenseVector, ParamBlock, ParamSet, Tape, Var, LEAKY_SLOPE};
use crate::sgparse::SceneGraph;

use super::data::TrainBatch;

/// Architecture hyperparameters; everything that fixes tensor shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub word_dim: usize,
    pub region_dim: usize,
    pub heads: usize,
    pub max_rank: usize,
    pub oa_layers: usize,
    pub oo_layers: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            word_dim: WORD_DIM,
            region_dim: REGION_DIM,
            heads: DEFAULT_HEADS,
            max_rank: DEFAULT_MAX_RANK,
            oa_layers: 1,
            oo_layers: 2,
            leaky_slope: LEAKY_SLOPE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("word_dim", self.word_dim),
            ("region_dim", self.region_dim),
            ("heads", self.heads),
            ("max_rank", self.max_rank),
            ("oa_layers", self.oa_layers),
            ("oo_layers", self.oo_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::invalid(format!("{} heads do not divide D = {}", self.heads, self.dim)));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid(format!("leaky slope {} outside (0,1)", self.leaky_slope)));
        }
        Ok(())
    }
}

/// Both towers of the dual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub concept: ConceptEncoderParams,
    pub visual: VisualEncoderParams,
    pub scene: SceneEncoderParams,
    names: Vec<String>,
}

/// Tape handles for every tensor of a bound model.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub concept: ConceptVars,
    pub visual: VisualVars,
    pub scene: SceneVars,
}

impl ModelVars {
    /// Parameter nodes in canonical block order.
    pub fn params(&self) -> Vec<Var> {
        let c = &self.concept;
        let v = &self.visual;
        let mut out = vec![
            c.table,
            c.projection,
            c.bias,
            v.fc1,
            v.fc1_bias,
            v.fc2,
            v.fc2_bias,
            v.query,
            v.key,
            v.value,
            v.output,
            v.rank_logits,
        ];
        for l in self.scene.oa.iter().chain(&self.scene.oo) {
            out.push(l.w);
            out.push(l.a);
        }
        out.extend([self.scene.w_active, self.scene.w_passive, self.scene.rank_logits]);
        out
    }
}

impl ModelParams {
    pub fn init(config: ModelConfig, vocab: Vocab, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let concept = ConceptEncoderParams::init(vocab, config.word_dim, config.dim, rng);
        let visual = VisualEncoderParams::init(config.region_dim, config.dim, config.heads, config.max_rank, rng)?;
        let mut scene = SceneEncoderParams::init(config.dim, config.oa_layers, config.oo_layers, config.max_rank, rng);
        for l in scene.oa_layers.iter_mut().chain(scene.oo_layers.iter_mut()) {
            l.slope = config.leaky_slope;
        }
        let names = block_names(config.oa_layers, config.oo_layers);
        Ok(Self {
            config,
            concept,
            visual,
            scene,
            names,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.concept.vocab
    }

    /// Hash of the architecture and vocabulary; independent of weights.
    pub fn config_hash(&self) -> u64 {
        config_hash(&self.config, self.vocab())
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> ModelVars {
        ModelVars {
            concept: self.concept.bind(tape, trainable),
            visual: self.visual.bind(tape, trainable),
            scene: self.scene.bind(tape, trainable),
        }
    }

    pub fn encode_image(&self, regions: &DenseMatrix) -> Result<DenseVector> {
        encode_image(regions, &self.visual)
    }

    pub fn encode_caption(&self, g: &SceneGraph) -> Result<CaptionEncoding> {
        encode_caption(g, &self.concept, &self.scene)
    }

    pub fn encode_captions(&self, graphs: &[SceneGraph]) -> Result<Vec<CaptionEncoding>> {
        encode_captions(graphs, &self.concept, &self.scene)
    }
}

pub fn config_hash(config: &ModelConfig, vocab: &Vocab) -> u64 {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update([0u8]);
    h.update(vocab.to_file_string().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn block<'a>(name: &'a str, rows: usize, cols: usize, data: &'a [f64]) -> ParamBlock<'a> {
    ParamBlock {
        name,
        shape: (rows, cols),
        data,
    }
}

/// Canonical block names, aligned with [`ParamSet::blocks`].
pub fn block_names(oa_layers: usize, oo_layers: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "concept.embedding_table",
        "concept.projection",
        "concept.bias",
        "visual.fc1",
        "visual.fc1_bias",
        "visual.fc2",
        "visual.fc2_bias",
        "visual.query",
        "visual.key",
        "visual.value",
        "visual.output",
        "visual.rank_logits",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for (stack, layers) in [("oa", oa_layers), ("oo", oo_layers)] {
        for k in 0..layers {
            names.push(format!("scene.{stack}.{k}.w"));
            names.push(format!("scene.{stack}.{k}.a"));
        }
    }
    names.extend(
        ["scene.w_active", "scene.w_passive", "scene.rank_logits"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

impl ModelParams {
    fn tensors(&self) -> Vec<(usize, usize, &[f64])> {
        let c = &self.concept;
        let v = &self.visual;
        let s = &self.scene;
        let (d, dw) = (c.dim(), c.word_dim());
        let mut out: Vec<(usize, usize, &[f64])> = vec![
            (c.embedding_table.rows(), dw, c.embedding_table.as_slice()),
            (dw, d, c.projection.as_slice()),
            (1, d, c.bias.as_slice()),
            (v.fc1.rows(), v.fc1.cols(), v.fc1.as_slice()),
            (1, v.fc1_bias.dim(), v.fc1_bias.as_slice()),
            (v.fc2.rows(), v.fc2.cols(), v.fc2.as_slice()),
            (1, v.fc2_bias.dim(), v.fc2_bias.as_slice()),
            (v.query.rows(), v.query.cols(), v.query.as_slice()),
            (v.key.rows(), v.key.cols(), v.key.as_slice()),
            (v.value.rows(), v.value.cols(), v.value.as_slice()),
            (v.output.rows(), v.output.cols(), v.output.as_slice()),
            (v.pool.max_rank(), 1, v.pool.rank_logits.as_slice()),
        ];
        for l in s.oa_layers.iter().chain(&s.oo_layers) {
            out.push((l.w.rows(), l.w.cols(), l.w.as_slice()));
            out.push((l.a.dim(), 1, l.a.as_slice()));
        }
        out.push((s.w_active.rows(), s.w_active.cols(), s.w_active.as_slice()));
        out.push((s.w_passive.rows(), s.w_passive.cols(), s.w_passive.as_slice()));
        out.push((s.pool.max_rank(), 1, s.pool.rank_logits.as_slice()));
        out
    }
}

impl ParamSet for ModelParams {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        self.tensors()
            .into_iter()
            .zip(&self.names)
            .map(|((r, c, d), n)| block(n, r, c, d))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<(&str, &mut [f64])> {
        let Self {
            concept,
            visual,
            scene,
            names,
            ..
        } = self;
        let mut data: Vec<&mut [f64]> = vec![
            concept.embedding_table.as_mut_slice(),
            concept.projection.as_mut_slice(),
            concept.bias.as_mut_slice(),
            visual.fc1.as_mut_slice(),
            visual.fc1_bias.as_mut_slice(),
            visual.fc2.as_mut_slice(),
            visual.fc2_bias.as_mut_slice(),
            visual.query.as_mut_slice(),
            visual.key.as_mut_slice(),
            visual.value.as_mut_slice(),
            visual.output.as_mut_slice(),
            visual.pool.rank_logits.as_mut_slice(),
        ];
        for l in scene.oa_layers.iter_mut().chain(scene.oo_layers.iter_mut()) {
            data.push(l.w.as_mut_slice());
            data.push(l.a.as_mut_slice());
        }
        data.push(scene.w_active.as_mut_slice());
        data.push(scene.w_passive.as_mut_slice());
        data.push(scene.pool.rank_logits.as_mut_slice());
        names.iter().map(String::as_str).zip(data).collect()
    }
}

/// Records the full dual-encoder objective for one batch.
pub fn batch_loss<'a>(
    tape: &mut Tape<'a>,
    vars: &ModelVars,
    batch: &'a TrainBatch,
    max_rank: usize,
    loss: &LossConfig,
) -> Result<(Var, LossComponents)> {
    let regions = tape.matrix_constant(&batch.regions);
    let images = encode_region_sets(tape, &vars.visual, regions, &batch.segments);
    let graphs: Vec<_> = batch.graphs.iter().collect();
    let captions = encode_graph_batch(tape, vars.concept, &vars.scene, max_rank, &graphs)?;
    total_loss_on_tape(
        tape,
        images,
        captions.captions,
        captions.entities,
        &captions.entity_owner,
        loss,
    )
}

/// Loss value and canonical-order gradients for one batch.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &TrainBatch,
    loss: &LossConfig,
) -> Result<(LossComponents, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let (out, parts) = batch_loss(&mut tape, &vars, batch, params.config.max_rank, loss)?;
    let mut grads = tape.backward(out);
    let g = vars
        .params()
        .into_iter()
        .zip(params.tensors())
        .map(|(v, (r, c, _))| grads.take(v).unwrap_or_else(|| vec![0.0; r * c]))
        .collect();
    Ok((parts, g))
}

/// Loss value only, without gradient bookkeeping.
pub fn loss_value(params: &ModelParams, batch: &TrainBatch, loss: &LossConfig) -> Result<LossComponents> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    Ok(batch_loss(&mut tape, &vars, batch, params.config.max_rank, loss)?.1)
}
