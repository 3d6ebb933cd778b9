//! Synthetic paired clips, their on-disk form, subject-disjoint splits and batching.

pub mod generator;
pub mod sampler;
pub mod split;
pub mod storage;

pub use generator::{generate_dataset, GeneratorSpec, Informativeness, LabeledPair};
pub use sampler::{sample_batch, EpochSampler, PairBatch};
pub use split::{split_by_subject, SplitSpec, Splits};
pub use storage::{read_dataset, write_dataset, Dataset, Manifest};
