//! Scene-graph dual encoder for image-text retrieval.
//!
//! Captions are compiled from dependency parses into scene graphs, encoded
//! by a two-stage graph attention network, and matched against pooled
//! region features in a shared embedding space. Image embeddings are cached
//! so a text query costs one caption encoding plus one matrix scan.

mod binio;
pub mod encoders;
pub mod error;
pub mod graphnet;
pub mod losses;
pub mod numcore;
pub mod retrieval;
pub mod sgparse;
pub mod training;

pub use error::{Error, Result};
