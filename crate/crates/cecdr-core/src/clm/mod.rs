//! Causality Labeling Module: similarity computation, empirical-CDF
//! calibration, max fusion, and construction of the causality-aware dataset.

mod behavior;
mod calibrator;
mod dataset;

pub use behavior::{train_behavior_embeddings, BehaviorConfig};
pub use calibrator::{fit_calibrator, CalibratorFit, SimilarityCalibrator, MIN_CALIBRATION_PAIRS};
pub use dataset::{
    build_dataset, export_examples, import_examples, label_precision, raw_similarity,
    CausalExample, LabelingConfig, Scorer, EXAMPLES_HEADER,
};
