//! Phrase, region-set and pooling encoders.

mod concept;
pub mod instrument;
mod pool;
mod regions;
mod visual;
mod vocab;

pub use concept::{encode_concept, encode_phrases, ConceptEncoderParams, ConceptVars, WORD_DIM};
pub use pool::{pool_set, PoolParams, DEFAULT_MAX_RANK};
pub use regions::{manifest_path, read_regions, write_regions, RegionSet};
pub use visual::{
    augment_regions, encode_image, encode_region_sets, region_mlp, segment_attention, self_attention,
    VisualEncoderParams, VisualVars, DEFAULT_HEADS, REGION_DIM,
};
pub use vocab::{Vocab, MASK, UNK, UNK_TOKEN};
