//! Joint reconstruction of electron density and attenuation from limited-angle
//! transmission and Compton scatter data, with microlocal artifact prediction.

pub mod artifacts;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod microlocal;
pub mod operators;
pub mod phantoms;
pub mod solvers;

pub use error::{Error, Result};
