//! Hybrid spatio-temporal attention encoder for EEG sleep staging.
//!
//! The crate is `no_std` and needs only `alloc`. It provides:
//!
//! * [`tensor`] and [`autodiff`]: dense `f64` arrays and a recorded tape with
//!   exact reverse-mode gradients for every operation the model uses.
//! * [`attention`] and [`encoder`]: multi-head dot-product attention, the
//!   feed-forward block, and the two residual blocks that attend across
//!   channels and then across time slices.
//! * [`model`] and [`train`]: classifier heads, cross-entropy, Adam/SGD.
//! * [`synth`]: seeded synthetic epochs with tunable class structure.
//! * [`metrics`]: confusion matrix, per-stage and macro F1, report tables.
//! * [`gradcheck`]: finite-difference verification of model gradients.
//!
//! File formats, configuration and the command-line front end live in the
//! `hass` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod params;
pub mod rng;
pub mod stage;
pub mod synth;
pub mod tensor;
pub mod train;

pub use attention::{AttentionParams, FfnParams, HeadProjection, LayerNormParams};
pub use autodiff::{Gradients, Tape, Var};
pub use encoder::{init_encoder, EncoderConfig, HassEncoderParams, InputDims};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use model::{ClassifierParams, HeadKind, Model, ModelConfig};
pub use stage::SleepStage;
pub use synth::{EpochRecord, SynthSpec};
pub use tensor::{Shape, Tensor};
pub use train::{Optimizer, TrainConfig, TrainTrace};
