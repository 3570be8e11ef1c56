//! Command line and HTTP front ends over `fmrisim-core`.

pub mod commands;
pub mod server;
