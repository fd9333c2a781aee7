pub mod baseline;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod ghsurv;
pub mod longitudinal;
pub mod model;
pub mod modelsel;
pub mod posterior;
pub mod predict;
pub mod priors;
pub mod run;
pub mod sampler;
pub mod scalar;
pub mod simulate;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
