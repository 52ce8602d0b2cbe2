//! Datasets, minibatching and loaders (IDX images, delimited sequences,
//! generated tasks).

mod dataset;
mod delimited;
mod idx;
mod sequence;
mod synthetic;

pub use dataset::{Batch, Dataset};
pub use delimited::{load_delimited_sequences, write_delimited_sequences};
pub use idx::{load_idx, load_idx_limit, write_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use sequence::{image_to_sequence, SequenceMode};
pub use synthetic::{generate, synthetic_task, SyntheticSizes, SyntheticTask};

/// Default number of training images kept from an IDX training file.
pub const DESK_TRAIN_LIMIT: usize = 10_000;
/// Default number of test images kept from an IDX test file.
pub const DESK_TEST_LIMIT: usize = 2_000;
