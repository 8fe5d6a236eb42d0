//! Hiding many secret images in one cover with exactly invertible coupling
//! networks, cover-conditioned mosaic transforms and a capacity-distortion
//! evaluation.
//!
//! The crate is self-contained: [`autodiff`] provides the tensor tape and
//! gradients, and everything above it is assembled from those primitives.

pub mod autodiff;
pub mod cli;
pub mod coupling;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod mosaic;
pub mod optim;
pub mod orthoconv;
pub mod params;
pub mod pipeline;
pub mod selftest;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use mosaic::{grid_shape, MosaicLayout};
pub use pipeline::{NetConfig, QuantMode, SmileNet, StegoOutput};
pub use tensor::{ImageTensor, Scalar, Tensor};
