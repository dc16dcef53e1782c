//! Verification of quantized neural networks against bit-flip attacks on a
//! single parameter.
//!
//! The numeric core is generic over [`Scalar`] (`f64` or `f32`); the aliases
//! below fix `f64`, which is what the verifier and the CLI use.

pub mod absdomain;
pub mod bfa_ra;
pub mod error;
pub mod milp;
pub mod model;
pub mod quant;
pub mod scalar;
pub mod sympoly;
pub mod verifier;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = model::QuantizedNetwork<f64>;
pub type Network32 = model::QuantizedNetwork<f32>;
pub type Element = absdomain::AbstractElement<f64>;
pub type Region = absdomain::InputRegion<f64>;
pub type Interval = quant::ParamInterval<f64>;
