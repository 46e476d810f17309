//! Classifier inputs: hierarchical network labels, flattened and 2.5D RGB
//! representations of component maps, and subject-level dataset splits.

mod dataset;
mod labels;
mod project;

pub use dataset::{
    build_dataset, class_counts, read_dataset, select, split_subjects, write_dataset, zscore_features, Example,
    FeatureMode, Features, Split, SplitSpec,
};
pub use labels::{
    format_component_labels, parse_component_labels, parse_label, read_component_labels, write_component_labels,
    ComponentLabels, LabelSet, RsnLabel, NOISE, UNKNOWN,
};
pub use project::{export_png, import_png, project_2p5d, projections, read_png_rgb, Projection, Rgb2p5};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RepresentError {
    #[error("label is empty")]
    EmptyLabel,
    #[error("label {label:?} has an empty token at position {position}")]
    EmptyToken { label: String, position: usize },
    #[error("label token {0:?} is not alphanumeric")]
    InvalidToken(String),
    #[error("labels file: {0}")]
    LabelsFile(String),
    #[error("component {0} has no label")]
    MissingLabel(usize),
    #[error("label {0} is not in the label set")]
    UnknownClass(String),
    #[error("need at least 3 subjects to split, got {0}")]
    TooFewSubjects(usize),
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error("subject {0} is not on the mask grid")]
    GridMismatch(String),
    #[error("subject {subject} has {found} components, expected {expected}")]
    ComponentCount { subject: String, found: usize, expected: usize },
    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),
    #[error("png: {0}")]
    Png(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RepresentError>;
