//! Photo-to-sketch generation with multi-scale 2D attention, and saliency
//! maps read off the accumulated attention.

pub mod attention;
pub mod autograd;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod plot;
pub mod resample;
pub mod saliency;
pub mod sketch_vector;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
