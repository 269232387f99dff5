//! Edge-of-stability laboratory: analytic diagonal-network and logistic
//! models, a from-scratch MLP with exact Hessian-vector products, gradient
//! descent and RK4 gradient flow engines, sharpness instrumentation, and a
//! learning-rate sweep harness that locates the flow-aligned / edge of
//! stability transition.

pub mod cli;
pub mod data_io;
pub mod diagnet;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod logit;
pub mod model;
pub mod network;
pub mod risk;
pub mod rng;
pub mod sharpness;
pub mod sweep;

pub use error::{Error, Result};
