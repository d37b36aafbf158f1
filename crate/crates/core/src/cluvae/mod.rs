//! Conditional land-use VAE with a configuration head and a zone head.

mod model;
mod train;

pub use model::{Batch, CluvaeDims, CluvaeGrads, CluvaeModel, DecodeOutput, LossBreakdown};
pub use train::{train_cluvae, EpochLoss, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GreenLevel, LEVEL_COUNT};
use crate::vgae::ContextEmbedding;

/// The full model and its four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Guidance block of the condition zeroed.
    NoGuidance,
    /// Context block of the condition zeroed.
    NoContext,
    /// Trained without the zone loss; no zone head.
    NoZoneHead,
    /// Deterministic bottleneck `z = μ`, no KL term.
    NoVariational,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoGuidance,
        Variant::NoContext,
        Variant::NoZoneHead,
        Variant::NoVariational,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGuidance => "no_guidance",
            Variant::NoContext => "no_context",
            Variant::NoZoneHead => "no_zone_head",
            Variant::NoVariational => "no_variational",
        }
    }

    pub fn has_zone_head(self) -> bool {
        self != Variant::NoZoneHead
    }

    pub fn is_variational(self) -> bool {
        self != Variant::NoVariational
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::param(format!("unknown variant '{s}'")))
    }
}

/// One-hot guidance vector of a green level.
pub fn guidance_embedding(level: GreenLevel) -> [f64; LEVEL_COUNT] {
    let mut one_hot = [0.0; LEVEL_COUNT];
    one_hot[level.index()] = 1.0;
    one_hot
}

/// Condition vector `c = [s | i]`, width `|s| + 5`, with the block removed by
/// the variant zeroed so every variant shares the same input width.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding(pub Vec<f64>);

pub fn make_condition(s: &ContextEmbedding, level: GreenLevel, variant: Variant) -> ConditionEmbedding {
    let mut c = Vec::with_capacity(s.0.len() + LEVEL_COUNT);
    if variant == Variant::NoContext {
        c.extend(std::iter::repeat_n(0.0, s.0.len()));
    } else {
        c.extend_from_slice(&s.0);
    }
    if variant == Variant::NoGuidance {
        c.extend([0.0; LEVEL_COUNT]);
    } else {
        c.extend(guidance_embedding(level));
    }
    ConditionEmbedding(c)
}
