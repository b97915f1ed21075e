//! Dataset manifests, the tensor file format and the synthetic corpus
//! generator.

pub mod manifest;
pub mod synth;
pub mod tensor;

pub use manifest::{
    load_manifest, parse_manifest, read_records, save_manifest, write_manifest, AudioRef, Behavior, Dataset, Ear, Protocol,
    Record, SentenceRef, Split, TrialRef, TrialStimulus,
};
pub use synth::{generate, generate_synthetic, SynthConfig, SynthData};
pub use tensor::{DType, TensorBlob};
