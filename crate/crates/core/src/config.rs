use serde::{Deserialize, Serialize};

use crate::error::{GdrError, Result};

/// Architecture hyperparameters shared by the three stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_inner: usize,
    pub generator_layers: usize,
    pub matcher_layers: usize,
    pub rewriter_layers: usize,
    pub matcher_mlp_hidden: usize,
    /// Longest sequence any encoder or decoder accepts.
    pub max_positions: usize,
}

/// Query / response length cap.
pub const MAX_UTTERANCE_LEN: usize = 64;
/// Unfolded persona length cap.
pub const MAX_PERSONA_LEN: usize = 128;

impl ModelConfig {
    /// Small CPU-friendly defaults.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 32,
            heads: 4,
            ffn_inner: 64,
            generator_layers: 2,
            matcher_layers: 2,
            rewriter_layers: 2,
            matcher_mlp_hidden: 32,
            max_positions: MAX_PERSONA_LEN,
        }
    }

    /// Full-size setting: 512 hidden, 8 heads, 2048 inner, 3 layers per stage.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 512,
            heads: 8,
            ffn_inner: 2048,
            generator_layers: 3,
            matcher_layers: 3,
            rewriter_layers: 3,
            matcher_mlp_hidden: 512,
            max_positions: MAX_PERSONA_LEN,
        }
    }

    /// Tiny setting used by gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 8,
            heads: 2,
            ffn_inner: 12,
            generator_layers: 2,
            matcher_layers: 2,
            rewriter_layers: 2,
            matcher_mlp_hidden: 6,
            max_positions: MAX_PERSONA_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn_inner", self.ffn_inner),
            ("generator_layers", self.generator_layers),
            ("matcher_layers", self.matcher_layers),
            ("rewriter_layers", self.rewriter_layers),
            ("matcher_mlp_hidden", self.matcher_mlp_hidden),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(GdrError::Invalid(format!("{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(GdrError::Invalid(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.hidden % 2 != 0 {
            return Err(GdrError::Invalid("hidden must be even (sinusoidal positions)".into()));
        }
        if self.vocab_size <= crate::encoder::NUM_RESERVED {
            return Err(GdrError::Invalid("vocabulary holds only reserved tokens".into()));
        }
        Ok(())
    }
}
