// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod almon;
pub mod cli;
pub mod density;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod model;
pub mod sim;
pub mod time;

pub use error::{Error, Result};
