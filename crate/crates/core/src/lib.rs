//! Turbulence mitigation with teacher-student domain adaptation.
//!
//! - [`turbsim`]: parametric tilt-and-blur degradation and dataset fabrication.
//! - [`nets`]: encoder/decoder, dynamic-filter restoration trunk, parameter
//!   estimator, discriminator pair with partially shared layers, reproduce net.
//! - [`objectives`]: every training loss and the weighted objectives.
//! - [`trainer`]: alternating adversarial training, schedule, checkpoints.
//! - [`iqa`]: PSNR, SSIM, MSCN and PIQE.

pub mod error;
pub mod frame;
pub mod imgproc;
pub mod iqa;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod tensorfile;
pub mod trainer;
pub mod turbsim;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use frame::Frame;
