//! Frequency-domain cross-correlation estimators for particle image
//! velocimetry, with a grid pipeline, synthetic image generator and Monte
//! Carlo benchmark.

pub mod bench;
pub mod correlators;
pub mod error;
pub mod peakfit;
pub mod pivgrid;
pub mod spectral;
pub mod synth;

pub use correlators::{ContextBank, CorrelationPlane, Correlator, Method, MethodConfig};
pub use error::{Error, Result};
pub use pivgrid::{ContextPolicy, GridSpec, VectorField};
pub use spectral::{Spectrum, Window};
