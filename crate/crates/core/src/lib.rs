pub mod error;
pub mod experiment;
pub mod fft;
pub mod noise;
pub mod phantom;
pub mod recon;
pub mod session;
pub mod signal;
pub mod special;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
