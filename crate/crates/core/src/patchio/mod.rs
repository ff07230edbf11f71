//! Dataset ingestion, canvas construction, patch extraction, scan policies and
//! information-ratio tracking.

mod augment;
mod canvas;
mod coverage;
mod dataset;
mod image;
mod trajectory;

use std::path::PathBuf;

pub use augment::{augment, AugmentConfig};
pub use canvas::{make_canvas, Canvas, CanvasMode, Rect};
pub use coverage::CoverageMap;
pub use dataset::{load_dataset, parse_cifar_batch, synthetic, Dataset, DatasetFormat, CIFAR_RECORD};
pub use image::Image;
pub use trajectory::{generate_trajectory, grid_order, GlimpseStep, PolicyKind, ScanPolicy, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum PatchIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} at byte offset {offset}: {reason}")]
    Malformed {
        path: PathBuf,
        offset: usize,
        reason: String,
    },
    #[error("sample {index}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("no samples: {0}")]
    NoSamples(String),
    #[error("image region {region:?} is smaller than one {patch}x{patch} patch")]
    RegionTooSmall { region: Rect, patch: usize },
    #[error("{0}")]
    InvalidConfig(String),
}
