//! Backbone construction from declarative specs.

pub mod checkpoint;
mod model;
mod spec;

pub use model::{AttentionMaps, BuildOptions, Forward, Model};
pub use spec::{Attention, BlockType, ModelSpec, StageSpec, StemSpec};
