//! Core library: story model, model providers, generation pipelines,
//! script alignment, story compilation and project storage.

pub mod alignment;
pub mod compiler;
pub mod config;
pub mod events;
pub mod ids;
pub mod jobs;
pub mod media;
pub mod model;
pub mod pipelines;
pub mod providers;
pub mod store;
pub mod workspace;
