//! Random variate generators and the seedable stream contract.

mod gig;
mod inverse_gaussian;
pub mod standard;
mod stream;

pub use gig::{sample_gig, Gig};
pub use inverse_gaussian::{sample_inverse_gaussian, InverseGaussian};
pub use standard::*;
pub use stream::{derive_seed, RngStream};
