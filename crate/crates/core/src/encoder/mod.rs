//! The mode-slicing encoder: per-mode linear projection plus a fixed
//! temporal embedding, a shared bank of parallel causal convolution blocks
//! with kernel sizes `1, 2, 4, ..., 2^L`, and pooling across slices into one
//! representation per mode.

mod checkpoint;
mod forward;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use forward::{
    embed_slice, encode_slice, encode_windows, forward, forward_tape, forward_variant, RepVars,
    Representation,
};
pub use model::{sinusoidal_embedding, BoundModel, MostModel, Param};

use crate::error::{Error, Result};

/// Encoder architecture; `Full` is the mode-slicing model, the rest are
/// ablations of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderVariant {
    Full,
    /// Mode-1 slices only.
    M1d,
    /// Mode-2 slices only.
    M2d,
    /// Variables shuffled once by a seeded permutation before slicing.
    Random,
    /// Every scalar series encoded on its own, then pooled.
    Ci,
    /// One branch over the flattened `(d1 * d2, w)` matrix.
    Cd,
    NoTemporalEmbedding,
    /// Causal conv bank replaced by a pointwise linear map.
    NoCausalEncoder,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 8] = [
        EncoderVariant::Full,
        EncoderVariant::M1d,
        EncoderVariant::M2d,
        EncoderVariant::Random,
        EncoderVariant::Ci,
        EncoderVariant::Cd,
        EncoderVariant::NoTemporalEmbedding,
        EncoderVariant::NoCausalEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::Full => "full",
            EncoderVariant::M1d => "m1d",
            EncoderVariant::M2d => "m2d",
            EncoderVariant::Random => "random",
            EncoderVariant::Ci => "ci",
            EncoderVariant::Cd => "cd",
            EncoderVariant::NoTemporalEmbedding => "no-temporal-embedding",
            EncoderVariant::NoCausalEncoder => "no-causal-encoder",
        }
    }
}

impl fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown encoder variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Gelu,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MostConfig {
    /// Latent size; each mode gets `h / 2` rows.
    pub h: usize,
    /// Number of extra conv blocks; block `k` has kernel size `2^k`.
    pub levels: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    /// Longest window the temporal embedding table covers.
    pub max_window: usize,
    pub variant: EncoderVariant,
    pub seed: u64,
}

impl Default for MostConfig {
    fn default() -> Self {
        Self {
            h: 64,
            levels: 7,
            aggregator: Aggregator::Mean,
            activation: Activation::Gelu,
            max_window: 128,
            variant: EncoderVariant::Full,
            seed: 0,
        }
    }
}

impl MostConfig {
    pub fn h_mode(&self) -> usize {
        self.h / 2
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        (0..=self.levels).map(|k| 1usize << k).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.h < 2 || !self.h.is_multiple_of(2) {
            return Err(Error::Config(format!("h must be even and >= 2, got {}", self.h)));
        }
        if self.levels > 16 {
            return Err(Error::Config(format!("levels = {} is unreasonably large", self.levels)));
        }
        if self.max_window < 2 {
            return Err(Error::Config("max_window must be >= 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in EncoderVariant::ALL {
            assert_eq!(v.name().parse::<EncoderVariant>().unwrap(), v);
        }
        assert!("mystery".parse::<EncoderVariant>().is_err());
    }

    #[test]
    fn config_invariants() {
        let c = MostConfig::default();
        assert_eq!(c.h_mode(), 32);
        assert_eq!(c.kernel_sizes(), vec![1, 2, 4, 8, 16, 32, 64, 128]);
        assert!(MostConfig { h: 7, ..c.clone() }.validate().is_err());
        assert!(MostConfig { h: 0, ..c }.validate().is_err());
    }
}
