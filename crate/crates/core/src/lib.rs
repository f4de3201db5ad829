pub mod baseline;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod joint;
pub mod pipeline;
pub mod prepare;
pub mod preprocess;
pub mod providers;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
