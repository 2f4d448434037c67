//! Two-stage scene-graph encoder built from GATv2 layers.

mod gat;
mod scene;

pub use gat::{attention_coefficients, gat_forward, gat_layer, GatLayerParams, GatVars};
pub use scene::{
    contextualize_entities, edge_feature, encode_caption, encode_captions, encode_graph_batch, obj_att_gat,
    CaptionBatch, CaptionEncoding, SceneEncoderParams, SceneVars, TokenizedGraph,
};
