//! Feature store: manifest + MMFT feature files, batching, and a synthetic
//! generator.

mod batch;
mod manifest;
pub mod mmft;
mod sequence;
mod synth;

pub use batch::{make_batches, Batch, BatchPlan, Labels, SplitData};
pub use manifest::{
    binarize_intensities, load_manifest, save_manifest, FeatureStore, Label, Manifest, Modality,
    ModalityFeature, SampleRecord, SampleRef, Split, TaskType,
};
pub use sequence::average_over_time;
pub use synth::{generate, synth_generate, SynthConfig, SynthDataset};
