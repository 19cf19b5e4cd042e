//! Disentangled mode-specific representation learning for 3rd-order tensor
//! time series.
//!
//! A window `(d1, d2, w)` is sliced along each non-temporal mode, every slice
//! is embedded and passed through a shared multi-scale causal convolutional
//! encoder, and the per-slice encodings are pooled into one representation
//! per mode. Training is self-supervised with an instance loss over two
//! overlapping crops plus a mode loss that contrasts the two mode halves.
//! Frozen representations are evaluated with linear probes.

pub mod contrast;
pub mod encoder;
pub mod error;
pub mod ndnum;
pub mod probes;
pub mod trainer;
pub mod ttsdata;

pub use encoder::{EncoderVariant, MostConfig, MostModel, Representation};
pub use error::{Error, Result};
pub use ndnum::{Tape, Tensor, Var};
pub use ttsdata::TtsWindow;

