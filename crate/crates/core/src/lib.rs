//! Fuel-flow modelling for ageing airliners.
//!
//! The crate covers recorder ingestion and preprocessing, a parametric
//! physics baseline, a one-parameter logarithmic age correction, neural
//! regressors with and without an age-aware output head, evaluation by age
//! bin and a cumulative fleet fuel projection.

pub mod age;
pub mod cli;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod kv;
pub mod neural;
pub mod physics;
pub mod plot;
pub mod projection;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
