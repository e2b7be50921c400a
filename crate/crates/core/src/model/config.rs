use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub use_embedding_channel: bool,
    pub embedding_dim: usize,
}

impl ModelConfig {
    /// A small configuration suitable for unit tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 8,
            n_heads: 1,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 16,
            max_input_len: 16,
            max_output_len: 8,
            dropout_rate: 0.0,
            use_embedding_channel: false,
            embedding_dim: 8,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
            ("embedding_dim", self.embedding_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_input_len < 4 || self.max_output_len < 4 {
            return Err(Error::InvalidConfig("max lengths must be at least 4".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}
