//! Desk-scale harness around `densesplat-core`: synthetic scenes, file
//! formats, the dense-versus-sparse comparison and the command line.

pub mod baseline;
pub mod compare;
pub mod config;
mod error;
pub mod io;
pub mod metrics;
pub mod outputs;
pub mod reference;
pub mod synth;

pub use densesplat_core as core;
pub use error::{Error, Result};
