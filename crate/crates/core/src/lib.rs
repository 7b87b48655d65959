//! Weather-condition classification for satellite ground-terminal antennas.
//!
//! The pipeline: a segmentation backend isolates the dish (mask removal), a
//! data forge composites augmented dish cutouts onto weather backgrounds to
//! manufacture balanced datasets, a frozen pre-trained backbone with a small
//! trainable FC head classifies dish condition, and an evaluation/complexity
//! harness produces the comparison metrics, loss-curve plots and cost tables.

pub mod classifier;
pub mod eval;
pub mod forge;
pub mod imaging;
pub mod pipeline;
pub mod profiler;
pub mod segmenter;
pub mod synth;
