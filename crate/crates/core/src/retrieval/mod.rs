//! Cached-embedding search, recall evaluation, entity reranking and the
//! query latency benchmark.

mod bench;
mod cache;
mod embed;
mod index;
mod metrics;

pub use bench::{bench_latency, BenchReport, BenchRow};
pub use embed::{
    embed_captions, embed_images, entity_id, positional_ids, row_vector, score_dataset, CaptionIndexes, ScoredSplit,
};
pub use cache::{cache_bytes, cache_from_bytes, read_embeddings, write_embeddings};
pub use index::{
    build_index, query, query_named, query_scores, top_k, EmbeddingIndex, EmbeddingRecord, IndexKind, RetrievalResult,
};
pub use metrics::{
    ensemble_scores, entity_minimums, evaluate, rank_both_ways, recall_at_k, rerank, rerank_matrix, rsum,
    select_beta, similarity_matrix, Metrics, BETA_GRID, RECALL_KS,
};
