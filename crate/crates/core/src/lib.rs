pub mod data;
pub mod dichotic;
pub mod error;
pub mod experiment;
pub mod model;
pub mod pairs;
pub mod pipeline;
pub mod preproc;
pub mod rng;
pub mod sigproc;
pub mod stats;
pub mod stimulus;
pub mod trainer;

pub use error::{Error, Result};
pub use data::{Dataset, Protocol, SynthConfig};
pub use experiment::{Corpus, CvResult, ExperimentConfig};
pub use model::{Checkpoint, ContextKind, Model, ModelConfig, SimVariant};
pub use preproc::PreprocConfig;
pub use stats::{PredictionRecord, TestResult};
pub use stimulus::BoundaryMode;
pub use trainer::{LambdaPolicy, TrainConfig};
