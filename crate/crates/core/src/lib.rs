//! Storage-backed E2LSH: an approximate nearest neighbour index whose hash
//! tables and buckets live on a block device and are queried through an
//! asynchronous read pipeline.

pub mod builder;
pub mod cost;
pub mod dataset;
pub mod engine;
pub mod eval;
pub mod format;
pub mod lsh;
pub mod storage;

pub use builder::{build_index, params_for, verify_index, AuditReport};
pub use dataset::{load_dataset, write_dataset, Dataset, FileFormat};
pub use engine::{ann_query, rcnn_search, run_batch, Concurrency, Index, MemoryIndex, Neighbor, QueryResult};
pub use lsh::{compute_params, ParamSet};
