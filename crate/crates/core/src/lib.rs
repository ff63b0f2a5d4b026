//! Radial threat estimation for pipelines monitored by distributed acoustic
//! sensing (DAS).
//!
//! The crate covers the whole desk-scale pipeline: a seeded simulator of
//! excavation events on adjacent defense zones ([`simulate`]), VMD denoising
//! ([`vmd`]), spectrogram tiles stitched across zones ([`featurize`]), a
//! from-scratch SE/MBConv classifier with compound scaling ([`network`]) and
//! the training/evaluation harness ([`train`], [`metrics`]).

pub mod dastrace;
pub mod featurize;
pub mod metrics;
pub mod network;
pub mod simulate;
pub mod train;
pub mod vmd;
