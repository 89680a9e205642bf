//! Video prediction with a per-frame encoder, a U-shaped attention
//! translator and a mirrored decoder, plus masked-reconstruction pretraining.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod encoder;
mod error;
mod format;
pub mod loss;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod runconfig;
pub mod translator;

pub use checkpoint::{Checkpoint, NamedTensor, Phase};
pub use config::{BlockKind, ModelConfig, OptimizerConfig, Preset, Schedule};
pub use dataio::{gen_moving_shapes, Pixels, VideoDataset};
pub use error::{Error, FormatError, Result};
pub use metrics::MetricReport;
pub use model::Model;
pub use optim::{lr_at, Adam};
pub use pipeline::{evaluate, predict, pretrain, train, Init, LossLog, TrainOptions, TrainOutcome};
pub use runconfig::RunConfig;
