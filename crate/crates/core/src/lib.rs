#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod ceres;
pub mod discretize;
pub mod elliptic;
pub mod error;
pub mod linalg;
pub mod lradi;
pub mod mc;

pub use error::{Error, Result};
