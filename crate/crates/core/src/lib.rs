//! Simulation and analysis toolkit for an NV-center network node: an electronic
//! spin hyperfine-coupled to a register of ¹³C nuclear-spin memories.

pub mod error;
pub mod analysis;
pub mod node;
pub mod protocol;
pub mod pump;
pub mod qcore;
pub mod register;

pub use error::{Error, Result};
