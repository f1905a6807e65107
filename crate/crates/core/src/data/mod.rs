//! Labeled image sets: the procedural fine-grained generator, the `GZDS`
//! container, and folder ingestion.

mod container;
mod ingest;
mod synthetic;

pub use container::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_VERSION};
pub use ingest::{ingest_folder, IngestManifest};
pub use synthetic::{
    erase_parts, generate, localization_score, GeneratedManifest, Glyph, SplitInfo, SyntheticData, SyntheticSpec,
};

use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Axis-aligned box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl PartBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: usize,
    /// Ground-truth location of the class-discriminative part, when known.
    /// Used for verification only, never for training.
    pub part_box: Option<PartBox>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub side: usize,
    pub channels: usize,
    pub images: Vec<LabeledImage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.images {
            counts[s.label] += 1;
        }
        counts
    }
}
