//! Inertial navigation simulation and ConvNet-based position correction.

pub mod attitude;
pub mod convnet;
pub mod earth;
pub mod error;
pub mod experiment;
pub mod imu;
pub mod io;
pub mod strapdown;
pub mod trajectory;

pub use error::{Error, Result};
