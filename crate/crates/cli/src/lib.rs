//! Experiment orchestration for attrgen: configs, the on-disk
//! synth/train/predict/eval pipeline with manifests, and the drivers for
//! the comparison experiments.

pub mod artifacts;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod pipeline;
