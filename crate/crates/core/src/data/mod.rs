//! Frames, movies, samples and dataset splits.

pub mod movie;
pub mod sample;
pub mod split;

pub use movie::{Direction, Movie};
pub use sample::{extract_samples, output_offsets, Origin, Sample, StaticMap};
pub use split::{split_by_regime, split_dataset, Split, SplitRatio};
