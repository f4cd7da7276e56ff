//! Expert transition datasets: collection, binary format, and statistics.

pub mod collect;
pub mod format;
pub mod stats;

pub use collect::{
    collect, collect_records, file_hash, CollectConfig, DESK_SIZES, PAPER_SIZES, SIZE_NAMES,
};
pub use format::{
    manifest_path, read_dataset, write_dataset, DatasetError, DatasetManifest, DatasetReader,
    TransitionRecord, DATASET_MAGIC, DATASET_VERSION,
};
pub use stats::{dataset_stats, ColumnStats, DatasetStats, STD_EPS};
