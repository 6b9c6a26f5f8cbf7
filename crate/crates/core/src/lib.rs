//! Tau functions of block moment matrices built from deformed pairings,
//! the multiple orthogonal polynomials they encode, and the bilinear and
//! Hirota identities they satisfy.

pub mod cauchy_wave;
pub mod cli;
pub mod config;
pub mod error;
pub mod hirota_pde;
pub mod inner_product;
pub mod linalg;
pub mod moment_matrix;
pub mod mops;
pub mod report;
pub mod scenarios;
pub mod series;
pub mod suite;
pub mod sweep;
pub mod timealg;

pub use error::{Error, Result};
