//! Quantification consumers that map synthetic signals back to the
//! parameters that generated them.

pub mod dictionary;
pub mod metrics;
pub mod mlp;

pub use dictionary::{build_dictionary, dictionary_match, dictionary_match_complex, Dictionary, MatchResult};
pub use metrics::{
    detect_peaks, fwhm, mean_squared, model_consistency_loss, peak_correlation, pearson, DEFAULT_PEAK_THRESHOLD,
};
pub use mlp::{
    mlp_infer, mlp_train, read_model, write_model, Activation, Gradient, Layer, MlpModel, TrainConfig, TrainReport,
    TrainingPair,
};
