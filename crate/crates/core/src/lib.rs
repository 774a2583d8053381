pub mod error;
pub mod frame;
pub mod warp_ops;

pub use error::{Error, Result};
pub use frame::{FlowField, Frame, MultiFlow};
pub mod backbone;
pub mod blfnet;
pub mod synth;
pub mod fusion;
pub mod tenet;
pub mod config;
pub mod model;
pub mod losses;
pub mod data;
pub mod checkpoint;
pub mod trainkit;
pub mod evalkit;
pub mod cli;
