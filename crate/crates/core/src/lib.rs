//! Masked clinical modelling for tabular survival data.
//!
//! The crate covers the full pipeline: schema-driven ingestion
//! ([`dataset`]), reversible Box-Cox normalization ([`transform`]), the
//! masked attention + MLP reconstruction network ([`model`]), whole-dataset
//! synthesis and conditional augmentation ([`generation`]), a Cox
//! proportional hazards evaluation stack ([`survival`]), SMOTE and MICE
//! comparators ([`baselines`]) and the cross-validated experiment harness
//! ([`harness`]).

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod generation;
pub mod harness;
pub mod model;
pub mod rng;
pub mod survival;
pub mod transform;

pub use error::{Error, Result};
