#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod ablation;
pub mod attention;
pub mod corpus;
pub mod diff;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradsuite;
pub mod labelkit;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
