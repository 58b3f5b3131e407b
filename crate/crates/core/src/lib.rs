pub mod error;
pub mod cli;
pub mod estimators;
pub mod functions;
pub mod inequality_lab;
pub mod kernel;
pub mod quadrature;
pub mod sampler;
pub mod verify;

pub use error::{Result, WfbmError};
pub use kernel::{ProcessParams, RegimeFlags, Tolerances};
