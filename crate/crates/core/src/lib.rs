//! Echocardiogram analysis building blocks: factored spatio-temporal
//! convolution, segmentation-driven beat extraction, ejection-fraction and
//! left-ventricle dimension models, and synthetic data with exact labels.

pub mod beats;
pub mod checkpoint;
pub mod conv;
pub mod counter;
pub mod ctr1;
pub mod ef;
pub mod error;
pub mod lvd;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
