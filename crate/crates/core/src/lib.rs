//! Detection, explanation and semantic factor ranking of urban physical
//! disorder (UPD) in street-view imagery.
//!
//! The pipeline has three stages:
//!
//! 1. **Detect** – a shifted-window transformer classifier ([`swin`]) maps an
//!    [`ImageRaster`](raster::ImageRaster) to UPD / non-UPD probabilities.
//! 2. **Explain** – Score-CAM ([`scorecam`]) turns the last-stage feature grid
//!    into an [`ActivationMap`](raster::ActivationMap) in `[0, 1]`.
//! 3. **Rank** – the activation map is merged with an externally produced
//!    [`SegmentationMap`](segmentation::SegmentationMap) and every semantic class
//!    is scored by its mean activation density ([`ranking`]).
//!
//! Around the pipeline sit the dataset tooling ([`perception`]), the linear
//! head trainer ([`train`]), evaluation ([`metrics`], [`morphology`]) and
//! geospatial export ([`geo`]). The [`cli`] module backs the `upd` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod geo;
pub mod manifest;
pub mod metrics;
pub mod morphology;
pub mod perception;
pub mod ranking;
pub mod raster;
pub mod rng;
pub mod scorecam;
pub mod segmentation;
pub mod selftest;
pub mod swin;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use raster::{ActivationMap, FeatureGrid, ImageRaster};
pub use ranking::{rank_factors, FactorRanking};
pub use scorecam::{Classifier, Explainer, ScoreCam};
pub use segmentation::{SegmentationMap, StreetClass};
pub use swin::{SwinConfig, SwinModel, SwinWeights};
