pub mod bench;
pub mod distance;
pub mod engine;
pub mod error;
pub mod http;
pub mod index;
pub mod quantization;
pub mod storage;
pub mod types;

pub use error::{Error, Result};
