pub mod autodiff;
pub mod denoisers;
pub mod error;
mod fft;
pub mod harness;
pub mod image;
pub mod kernels;
pub mod linop;
pub mod losses;
pub mod solvers;

pub use error::{Error, Result};
pub use image::Image;
pub use kernels::{Kernel, KernelKind, KernelSpec};
pub use linop::SpectralOperator;
