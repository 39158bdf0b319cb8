pub mod autodiff;
pub mod bench;
pub mod data;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod rng;
pub mod search;
pub mod supernet;

pub use error::{Error, Result};
