//! Training-time disentangling of private classes at a network bottleneck,
//! with a biased-MNIST laboratory, leakage attacks and the matching
//! closed-form information analysis.

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod infotheory;
pub mod model;
pub mod regularizer;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
