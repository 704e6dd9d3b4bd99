//! Universal cell segmentation: dataset I/O, tertiary training targets,
//! augmentation, a small differentiable U-Net, multi-dataset training
//! schemes, instance reconstruction, evaluation and tracking.

pub mod augment;
pub mod ctc;
pub mod error;
pub mod grid;
pub mod imageio;
pub mod inference;
pub mod metrics;
pub mod nnkit;
pub mod optim;
pub mod reconstruct;
pub mod rng;
pub mod schedule;
pub mod targetgen;
pub mod track;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{Class, Grid, LabelMap, Mask, TertiaryMap};
