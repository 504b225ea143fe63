pub mod basis;
pub mod cost;
pub mod dense;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mesh;
pub mod operator;
pub mod quadrature;
pub mod tck;
pub mod tensor;
pub mod time;

pub use error::{Error, Result};
