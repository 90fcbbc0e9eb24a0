pub mod cli;
pub mod divergences;
pub mod eguchi;
pub mod error;
pub mod fd;
pub mod laplace;
pub mod models;
pub mod priors;
pub mod quadrature;
pub mod report;
pub mod tensors;
pub mod verify;

pub use error::{Error, Result};
