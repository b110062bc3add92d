// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod conic;
pub mod error;
pub mod escape;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod switched;

pub use error::{Error, Result};
