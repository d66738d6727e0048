//! Transformer semantic codec, dense channel codec and the end-to-end
//! transmitter/receiver composition for Bob and Eve.

mod decode;
mod network;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use decode::{semantic_decode_infer, teacher_forced_logits};
pub use network::{
    bind, channel_decode, channel_encode, forward, receive, semantic_decode_train, semantic_encode, BoundSet,
    ForwardOutput,
};
pub use params::{Collection, ParamSet, ParameterBundle};

/// Layer widths and counts. The embedding width equals `model_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Sentence slots `L`, start and end markers included.
    pub max_len: usize,
    /// Transformer width `V`.
    pub model_dim: usize,
    /// Real channel values per token `N`; pairs form complex symbols.
    pub symbol_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub channel_hidden: usize,
}

impl ModelConfig {
    /// Widths used for the full-scale experiments.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 30,
            model_dim: 128,
            symbol_dim: 16,
            layers: 3,
            heads: 8,
            ff_dim: 512,
            channel_hidden: 256,
        }
    }

    /// Desk-scale widths for the synthetic corpus.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 14,
            model_dim: 32,
            symbol_dim: 8,
            layers: 2,
            heads: 4,
            ff_dim: 64,
            channel_hidden: 64,
        }
    }

    /// Tiny widths for finite-difference checks.
    pub fn miniature() -> Self {
        Self {
            vocab_size: 12,
            max_len: 6,
            model_dim: 8,
            symbol_dim: 4,
            layers: 2,
            heads: 2,
            ff_dim: 16,
            channel_hidden: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("model_dim", self.model_dim),
            ("symbol_dim", self.symbol_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("channel_hidden", self.channel_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.symbol_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "symbol_dim {} must be even to pair into complex symbols",
                self.symbol_dim
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must leave room for start and end markers".into()));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config("vocab_size must exceed the four special tokens".into()));
        }
        Ok(())
    }

    /// Complex symbols per sentence, `M = L N / 2`.
    pub fn symbols_per_sentence(&self) -> usize {
        self.max_len * self.symbol_dim / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::full_scale(100).validate().unwrap();
        ModelConfig::toy(50).validate().unwrap();
        ModelConfig::miniature().validate().unwrap();
        assert_eq!(ModelConfig::full_scale(100).symbols_per_sentence(), 240);
    }

    #[test]
    fn invalid_dimensions() {
        let odd = ModelConfig {
            symbol_dim: 5,
            ..ModelConfig::miniature()
        };
        assert!(odd.validate().is_err());
        let heads = ModelConfig {
            heads: 3,
            ..ModelConfig::miniature()
        };
        assert!(heads.validate().is_err());
        let zero = ModelConfig {
            layers: 0,
            ..ModelConfig::miniature()
        };
        assert!(ParameterBundle::init(&zero, 0).is_err());
    }
}
