pub mod adversary;
pub mod client;
pub mod config;
pub mod error;
pub mod harness;
pub mod mac;
pub mod mpc;
pub mod plaintext;
pub mod ring;
pub mod shuffle;
pub mod stats;
pub mod transcript;

pub use error::{Error, Result};
