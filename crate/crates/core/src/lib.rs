//! Online multichannel beamforming for enhancing speech mixtures with an
//! unknown number of talkers.
//!
//! The crate is organized bottom-up: [`linalg`] holds the Hermitian kernels,
//! [`stft`] the streaming transform, [`scm`] the online covariance trackers,
//! [`beamformer`] the weight formulas, and [`enhancer`] wires them into a
//! per-frame streaming engine. [`scene`] renders synthetic noisy reverberant
//! mixtures with ground truth and [`metrics`] scores the results.

pub mod audio;
pub mod beamformer;
pub mod config;
pub mod enhancer;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod scene;
pub mod scm;
pub mod stft;
pub mod testkit;
pub mod wav;

pub use audio::MultichannelAudio;
pub use beamformer::{BeamformerWeights, TradeoffGamma, WeightKind};
pub use config::{BeamformerKind, NoiseScmMode, RunConfig};
pub use enhancer::{enhance, EnhanceOutput, Enhancer, StreamingEnhancer, TimingReport};
pub use error::{Error, Result};
pub use linalg::{CMatrix, HermitianScm, C64};
pub use metrics::{MetricReport, SegmentSet};
pub use scene::{SceneOutput, SceneSpec, SourceSpec};
pub use stft::{MultichannelSpectrum, StftConfig, WindowKind};
