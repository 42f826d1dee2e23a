//! Software model of a photonic extreme learning machine.
//!
//! Samples are written as phases on a spatial light modulator together with a
//! fixed embedding pattern, propagated to the far field by a linear transfer
//! operator, read by a saturating camera binned into `M` channels, and
//! classified or regressed by a ridge-trained linear readout.
//!
//! The stages live in [`dataset`], [`encoder`], [`propagation`],
//! [`detection`], [`features`] and [`readout`]; [`harness`] drives whole
//! experiments and sweeps from TOML configurations.

pub mod dataset;
pub mod detection;
pub mod encoder;
pub mod error;
pub mod features;
pub mod harness;
mod levels;
pub mod parallel;
pub mod propagation;
pub mod readout;

pub use dataset::{Dataset, SplitSpec, Targets, Task};
pub use detection::{ChannelLayout, Detector, DetectorConfig, ReadoutLevels, Saturation};
pub use encoder::{ComplexField, EmbeddingKind, EmbeddingMatrix, EncoderConfig, GridLayout, PhaseLevels};
pub use error::{DataError, OpticsError, ReadoutError};
pub use features::{FeatureMatrix, OpticalPipeline};
pub use parallel::Execution;
pub use propagation::{OperatorSpec, TransferOperator};
pub use readout::{Metrics, ReadoutModel, TargetEncoding, TargetMatrix};
