//! Min-norm barrier-function augmentation for LTI state-feedback and PI servo
//! controllers with component-wise min/max input and output limits.

pub mod analysis;
pub mod cbf;
pub mod error;
pub mod linalg;
pub mod lti;
pub mod pipeline;
pub mod policy;
pub mod riccati;
pub mod scenario;
pub mod servo;
pub mod sim;

pub use error::{Error, Result};
