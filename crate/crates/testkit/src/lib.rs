//! Reference implementations for tests. Everything here is written for
//! clarity over speed and shares no numerical code with `densesplat-core`
//! beyond the plain data types.

pub mod image;
pub mod neighbours;
pub mod splat;
