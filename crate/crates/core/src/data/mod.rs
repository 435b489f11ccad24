//! Tabular ingestion, vertical field partitioning, row splits and batching.

mod batch;
mod hash;
mod partition;
mod schema;
mod table;

pub use batch::{BatchPair, BatchStream, RowStream};
pub use hash::{hash_field, stable_hash64};
pub use partition::{
    overlap_split, vertical_partition, PartitionManifest, PartitionedDataset, PartyMatrix,
    PartyViews, Split, SplitSizes, VALIDATION_FRACTION,
};
pub use schema::{ActiveSide, FieldKind, FieldSpec, Schema, Side};
pub use table::{load_table, EncodedTable, RawColumn, RawTable};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("need {needed} rows ({n_overlap} overlapped + {n_nonoverlap} non-overlapped + {n_test} test) but table has {available}")]
    InsufficientRows {
        needed: usize,
        available: usize,
        n_overlap: usize,
        n_nonoverlap: usize,
        n_test: usize,
    },
    #[error("{split} split has a single label class")]
    SingleClass { split: String },
    #[error("invalid batching: {0}")]
    Batch(String),
}
