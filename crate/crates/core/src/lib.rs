pub mod compare;
pub mod error;
pub mod geo;
pub mod hda;
pub mod ingest;
pub mod spatial_stats;
pub mod synth;
pub mod validate;

pub use error::{Error, ErrorKind, Result};
