//! Datasets, splits, the data-to-pathway mapping and persistence.

pub mod dataset;
pub mod persist;
pub mod split;

pub use dataset::{blob_means, gen_blobs, gen_property_tabular, Dataset, PropertyFixture};
pub use persist::{
    load_checkpoint, load_dataset_csv, save_checkpoint, save_dataset_csv, Checkpoint, Manifest,
};
pub use split::{
    balanced_halves, build_mapping, pathway_count, sample_dq, split_auxiliary, MappingMatrix,
    OverlapPolicy, SplitPlan,
};
