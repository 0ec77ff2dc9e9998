use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;

/// How token positions are turned into additive position vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalStrategy {
    /// Learned row per day offset from the pivot, clipped to `±clip_days`.
    RelativeDays,
    /// Fixed sin/cos of the absolute sequence index.
    SinusoidalAbs,
    /// Learned row per absolute sequence index.
    LearnedAbs,
    /// Learned row per week offset from the pivot.
    Weekly,
    /// Fixed sin/cos of `2·σ(offset/τ)·L`.
    SigmoidAbs,
    /// Learned row per sequence index counted from the pivot.
    SequentialRel,
}

impl PositionalStrategy {
    pub const ALL: [PositionalStrategy; 6] = [
        PositionalStrategy::RelativeDays,
        PositionalStrategy::SinusoidalAbs,
        PositionalStrategy::LearnedAbs,
        PositionalStrategy::Weekly,
        PositionalStrategy::SigmoidAbs,
        PositionalStrategy::SequentialRel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PositionalStrategy::RelativeDays => "relative_days",
            PositionalStrategy::SinusoidalAbs => "sinusoidal_abs",
            PositionalStrategy::LearnedAbs => "learned_abs",
            PositionalStrategy::Weekly => "weekly",
            PositionalStrategy::SigmoidAbs => "sigmoid_abs",
            PositionalStrategy::SequentialRel => "sequential_rel",
        }
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, PositionalStrategy::SinusoidalAbs | PositionalStrategy::SigmoidAbs)
    }
}

impl fmt::Display for PositionalStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionalStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        PositionalStrategy::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Categories plus PAD and BOS.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub positional: PositionalStrategy,
    pub clip_days: i64,
    pub n_enc: usize,
    pub n_dec: usize,
    /// Day scale τ for `SigmoidAbs`.
    pub sigmoid_tau: f64,
    /// Position range L for `SigmoidAbs`.
    pub sigmoid_scale: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 35 + 2,
            embed_dim: 32,
            num_heads: 2,
            num_encoder_layers: 2,
            num_decoder_layers: 2,
            ffn_dim: 64,
            dropout: 0.1,
            positional: PositionalStrategy::RelativeDays,
            clip_days: 365,
            n_enc: 64,
            n_dec: 16,
            sigmoid_tau: 30.0,
            sigmoid_scale: 64.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// 6 encoder and 6 decoder layers, 6 heads, FFN width 2048. The embedding
    /// width is 516, the smallest multiple of the head count not below 512.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 516,
            num_heads: 6,
            num_encoder_layers: 6,
            num_decoder_layers: 6,
            ffn_dim: 2048,
            ..Self::default()
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            n_enc: self.n_enc,
            n_dec: self.n_dec,
            shuffle_within_session: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < 3 {
            return bad(format!("vocab_size {} leaves no real category", self.vocab_size));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return bad("embed_dim, num_heads and ffn_dim must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.n_enc == 0 || self.n_dec == 0 {
            return bad("n_enc and n_dec must be positive".into());
        }
        if self.clip_days < 0 {
            return bad("clip_days must be non-negative".into());
        }
        if self.sigmoid_tau <= 0.0 || self.layer_norm_eps <= 0.0 {
            return bad("sigmoid_tau and layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}
