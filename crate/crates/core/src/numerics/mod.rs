//! Special functions, densities, random streams and quadrature.

pub mod kde;
pub mod linalg;
pub mod quad;
pub mod rng;
pub mod special;

pub use kde::{kde_unit_interval, trapezoid_integral, DensityEstimate};
pub use rng::RngStream;
pub use special::{beta_cdf, expit, log_beta_fn, logit};
