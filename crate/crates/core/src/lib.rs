pub mod error;
pub mod kernels;
pub mod linalg;
pub mod param;
pub mod quad;
pub mod dist;
pub mod transform;
pub mod parallel;
pub mod sample;
pub mod stats;
pub mod optim;
pub mod fit_uv;
pub mod fit_mv;
pub mod discrim;
pub mod diagnostics;

pub use error::{Result, SnError};
