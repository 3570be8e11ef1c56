//! Configuration, archives, image export and the shared run pipeline.

pub mod analysis;
pub mod archive;
pub mod config;
pub mod export;
pub mod pipeline;
