//! Transformer encoder classifier and its checkpoint format.

pub mod config;
pub mod container;
pub mod encoder;

pub use config::EncoderConfig;
pub use container::Container;
pub use encoder::{argmax_rows, expected_shapes, Encoder, EncoderBatch, Provenance, Stage};
