//! Training loops for ERM, DANN and LADG, with stratified domain sampling,
//! metric logging and evaluation.

mod config;
mod eval;
mod loops;
mod metrics;
mod sampler;

pub use config::{Method, TrainConfig};
pub use eval::{
    evaluate, evaluate_rows, load_inference, score, score_name, CheckpointManifest, EvalReport, InferenceModels,
    TrainedModels, MANIFEST_FORMAT,
};
pub use loops::{train, train_dann, train_erm, train_ladg, train_with, Event, StepLosses, TrainOutput, Trainer};
pub use metrics::{accuracy, mixing_entropy, pearson_r, MetricsRecord, Phase};
pub use sampler::{DomainSampler, Minibatch};
