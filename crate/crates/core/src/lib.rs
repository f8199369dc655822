//! Dataset-shift curation: per-class anomaly detectors, score clustering,
//! shiftness quantification by group dropping, and optimal-transport dataset
//! distance, tied together by a staged pipeline.

pub mod anomaly;
pub mod cluster;
pub mod data;
pub mod otdd;
pub mod pipeline;
pub mod quant;
pub mod seed;
