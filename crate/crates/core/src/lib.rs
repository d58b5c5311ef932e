//! Metagenomic abundance tables rendered as images and classified with small CNNs.

pub mod binning;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fillup;
pub mod image;
pub mod ingest;
pub mod nn;
pub mod synthetic;

pub use error::{Error, Result};
