pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod guard;
pub mod inversion;
pub mod model;
pub mod numerics;
pub mod theory;

pub use error::{FlipError, Result};
