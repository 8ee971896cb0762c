pub mod audio;
pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod ctc;
pub mod decoder;
pub mod enhance;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod recipes;
pub mod synth;
pub mod tasks;
pub mod tokenizer;
pub mod trainer;

pub use config::ExperimentConfig;
pub use corpus::{CorpusManifest, Task, Utterance};
pub use error::{Error, Result};
