//! Chunked conditional 3D generation from posed images.

pub mod calibrate;
pub mod chunker;
pub mod condition;
pub mod config;
pub mod evalsuite;
pub mod error;
pub mod flowgen;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod spatial;
pub mod tensor_io;
pub mod toynet;

pub use error::{Error, Result};
