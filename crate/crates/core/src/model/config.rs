//! Model architecture and ablation configuration.

use alloc::format;
use alloc::string::String;

use crate::error::{CoreError, Result};
use crate::text::{EncoderConfig, Pooling};

/// How the two head scores combine into the final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScoreCombiner {
    /// Arithmetic mean of the query-side and item-side heads (default).
    Mean,
    QueryOnly,
    ItemOnly,
}

/// Non-neighbor baseline scorers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaselineKind {
    /// Independent encodings scored by scaled cosine similarity.
    TwoTower,
    /// Query and item concatenated into one sequence, scored by a head on the
    /// pooled joint encoding.
    CrossEncoder,
}

/// Architecture hyperparameters plus one toggle per ablatable component.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub k_neighbors: usize,
    /// Contrastive temperature.
    pub temperature: f64,
    pub lambda_qntc: f64,
    pub lambda_intc: f64,
    pub lambda_mutual: f64,
    pub pooling: Pooling,
    /// One encoder for targets and neighbors on both sides (default) or a
    /// separate stack per tower.
    pub shared_encoder: bool,
    pub combiner: ScoreCombiner,
    /// Leakage control: drop the scored pair's own counterpart from its
    /// neighbor lists at lookup time.
    pub exclude_self_neighbor: bool,
    pub use_qbn: bool,
    pub use_ibn: bool,
    pub use_nca: bool,
    pub use_tca: bool,
    pub use_qntc: bool,
    pub use_intc: bool,
    pub use_mutual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 5000,
            hidden_dim: 32,
            layers: 2,
            heads: 2,
            max_len: 16,
            k_neighbors: 5,
            temperature: 0.1,
            lambda_qntc: 0.1,
            lambda_intc: 0.1,
            lambda_mutual: 0.5,
            pooling: Pooling::Mean,
            shared_encoder: true,
            combiner: ScoreCombiner::Mean,
            exclude_self_neighbor: false,
            use_qbn: true,
            use_ibn: true,
            use_nca: true,
            use_tca: true,
            use_qntc: true,
            use_intc: true,
            use_mutual: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        let check = |field: &str, ok: bool, reason: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(CoreError::Config {
                    field: field.into(),
                    reason,
                })
            }
        };
        check(
            "k_neighbors",
            self.k_neighbors >= 1,
            "must be >= 1".into(),
        )?;
        check(
            "temperature",
            self.temperature > 0.0,
            format!("must be positive, got {}", self.temperature),
        )?;
        for (name, l) in [
            ("lambda_qntc", self.lambda_qntc),
            ("lambda_intc", self.lambda_intc),
            ("lambda_mutual", self.lambda_mutual),
        ] {
            check(name, l >= 0.0 && l.is_finite(), format!("must be >= 0, got {l}"))?;
        }
        Ok(())
    }

    /// Feed-forward width inside encoder blocks; fixed at `2 * hidden_dim`.
    pub fn ff_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Hidden width of each scoring head; fixed at `2 * hidden_dim`.
    pub fn head_hidden(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            heads: self.heads,
            max_len: self.max_len,
            ff_dim: self.ff_dim(),
            pooling: self.pooling,
        }
    }

    /// Encoder parameter prefix for the query (`true`) or item side.
    pub fn encoder_prefix(&self, query_side: bool) -> &'static str {
        if self.shared_encoder {
            "enc"
        } else if query_side {
            "enc_q"
        } else {
            "enc_i"
        }
    }

    /// Whether the query tower consumes behavior neighbors at all.
    pub fn query_side_neighbors(&self) -> bool {
        self.use_qbn
    }

    /// Whether the item tower consumes behavior neighbors at all.
    pub fn item_side_neighbors(&self) -> bool {
        self.use_ibn
    }
}
