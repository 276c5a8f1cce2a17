//! Information-emergence estimation for sequence models.

pub mod error;
pub mod mine;
pub mod parity;
pub mod pipeline;
pub mod repr_io;
pub mod synth;
pub mod tokenizer;
pub mod toy;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
