pub mod cone;
pub mod error;
pub mod experiment;
pub mod gmc;
pub mod mc;
pub mod quantum;
pub mod rng;
pub mod sle;
pub mod special;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
