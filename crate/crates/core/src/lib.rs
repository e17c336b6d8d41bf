//! Flow-control scheduling for a rotary transfer robot in a display FAB cell.

pub mod baseline;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod ppo;
pub mod tact;
pub mod world;

pub use error::ConfigError;
