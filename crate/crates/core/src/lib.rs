pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod extract;
pub mod graph;
pub mod interaction;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
