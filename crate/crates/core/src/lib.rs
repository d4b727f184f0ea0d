//! Missing-value prediction by the PCA-distance method.
//!
//! The complete samples are linearized by their leading principal components.
//! An incomplete record defines an affine subspace of candidate completions,
//! and the prediction is the candidate closest to the shifted principal
//! subspace.

pub mod cli;
pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod pca;
pub mod predictor;

pub use dataio::{load_csv, write_imputed, CsvOptions, Dataset};
pub use diagnostics::{
    influence_scores, loo_cv, remove_outliers, resample_ci, InfluenceReport, IntervalEstimate,
    Resampling, ResampleConfig, ValidationReport,
};
pub use error::{Error, Result};
pub use linalg::Basis;
pub use pca::{fit_pca, fit_scaling, Components, DataMatrix, PcaConfig, PrincipalModel};
pub use predictor::{
    impute_record, predict_line, predict_line_metric, predict_line_quadfit, predict_space,
    MetricSpec, PredictionResult, PredictionTask, SpaceMethod,
};
