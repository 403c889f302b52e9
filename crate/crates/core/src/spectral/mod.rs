//! Spherical harmonics and planar Fourier transforms, all differentiable.

mod fft2;
pub mod legendre;
mod sht;

pub use fft2::{fft2_forward, fft2_inverse};
pub use sht::{lmax_exact, ShtPlan, SpectralCoeffs};

#[cfg(test)]
mod tests;
