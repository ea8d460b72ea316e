#![cfg_attr(not(test), no_std)]
extern crate alloc;
mod error;
mod linalg;
pub mod util;
pub mod oracle;
pub mod sets;
pub mod outer;
pub mod model;
pub mod problem;
pub mod master;
pub mod stationarity;
pub mod bundle;
pub use error::{Error, Result};
pub use linalg::Mat;
