//! Annotation and feature ingestion, tokenization and synthetic datasets.

mod annotations;
mod features;
mod split;
mod synth;
mod text;
mod vocab;

pub use annotations::{load_annotations, write_annotations, AnnotationRecord};
pub use features::{
    decode_features, encode_features, feature_path, load_features, read_features, write_features, FeatureSequence,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use split::{load_split, resolve_record, DatasetSplit, Instance, LoadStats};
pub use synth::{generate_synthetic, SynthConfig, SynthDataset};
pub use text::{index_to_span, time_to_index, tokenize};
pub use vocab::{Vocabulary, UNK};
