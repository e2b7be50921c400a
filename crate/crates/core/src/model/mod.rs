//! Encoder-decoder transformer with hand-written backpropagation.

pub mod checkpoint;
mod config;
pub mod layers;
mod network;
mod optim;
mod params;

pub use config::ModelConfig;
pub use network::{DecoderState, EncoderOutput, EncoderPass, Example, Seq2Seq, TrainBatch};
pub use optim::{Adam, AdamConfig, TensorSet};
pub use params::{Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, Parameters};

#[cfg(test)]
mod tests;
