//! Caption → scene graph compilation from CoNLL-U dependency parses.

pub mod augment;
pub mod conllu;
pub mod extract;
pub mod graph;

pub use augment::{mask_tokens, subsample_graph, MASK_TOKEN};
pub use conllu::{parse_conllu, DepToken};
pub use extract::extract_scene_graph;
pub use graph::{graphs_from_json, graphs_to_json, ConceptNode, Relation, SceneGraph};
