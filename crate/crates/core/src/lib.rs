//! Interference pickup, acquisition and spectral forensics for
//! electro-quasistatic body-coupled wearables.

pub mod bands;
pub mod circuit;
pub mod error;
pub mod explain;
pub mod formats;
pub mod frontend;
pub mod rng;
pub mod scenario;
pub mod sources;
pub mod spectral;
pub mod waveform;

pub use error::{Error, ErrorClass, Result};
