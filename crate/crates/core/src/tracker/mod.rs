//! Ground-truth labeling, sample assembly, the hybrid CNN+LSTM tracker, its
//! baselines, training and top-K evaluation.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod train;

pub use config::{LabelMode, TrackerConfig};
pub use dataset::{
    build_samples, label_continuity, label_episodes, prepare, split_episodes, BeamLabel, BeamLabeler, Dataset, LabelTable,
    SceneKey, Split, TrackingSample,
};
pub use eval::{baseline_previous, evaluate, rank, EvalOptions, EvalReport, ReportRow};
pub use model::{BeamModel, HybridModel, SelectionModel};
pub use train::{train_all, train_model, EpochLog, TrainedModels};
