pub mod augment;
pub mod config;
pub mod corpus;
pub mod dp;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod model;
pub mod pate;
pub mod rundir;
pub mod source;
pub mod tutor;

pub use error::{Error, Result};
