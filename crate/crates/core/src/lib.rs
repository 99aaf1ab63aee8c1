//! Walking accessibility, origin-destination flows and Negative-Binomial
//! gravity models (global and geographically weighted).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod access;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod flows;
pub mod geo;
pub mod glm;
pub mod gwr;
pub mod optimize;
pub mod synth;

pub use error::{Error, Result};
