//! Wavelet-Fourier transform network for long-horizon multivariate forecasting.
//!
//! Global periodicity is read from the Fourier amplitude spectrum, local
//! time-frequency structure from a Morlet scalogram, and a spectral
//! periodicity measure decides how much each contributes inside every
//! residual block.

pub mod autodiff;
pub mod cli;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod folding;
pub mod model;
pub mod spectral;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod wftblock;

pub use error::{Result, WftError};
pub use tensor::{RngState, Tensor};
