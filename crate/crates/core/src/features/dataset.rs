use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, TensorError};
use crate::tensor::DenseArray;

/// Patch features of one video, `[frames, patches, channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVideo {
    features: DenseArray<f32>,
    /// Grid cell of the planted object per frame, when the generator knows it.
    planted: Option<Vec<usize>>,
}

impl FeatureVideo {
    pub fn new(features: DenseArray<f32>) -> Result<Self, TensorError> {
        if features.rank() != 3 {
            return Err(TensorError::Rank {
                op: "FeatureVideo",
                expected: "3",
                shape: features.shape().to_vec(),
            });
        }
        Ok(Self {
            features,
            planted: None,
        })
    }

    pub fn from_data(shape: [usize; 3], data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(DenseArray::new(shape.to_vec(), data)?)
    }

    pub fn with_planted(mut self, planted: Vec<usize>) -> Self {
        self.planted = Some(planted);
        self
    }

    pub fn features(&self) -> &DenseArray<f32> {
        &self.features
    }

    pub fn data(&self) -> &[f32] {
        self.features.data()
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.features.shape();
        [s[0], s[1], s[2]]
    }

    pub fn frames(&self) -> usize {
        self.shape()[0]
    }

    pub fn patches(&self) -> usize {
        self.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.shape()[2]
    }

    pub fn planted(&self) -> Option<&[usize]> {
        self.planted.as_deref()
    }

    /// Feature vector of one patch in one frame.
    pub fn patch(&self, frame: usize, patch: usize) -> &[f32] {
        let [_, p, d] = self.shape();
        let start = (frame * p + patch) * d;
        &self.data()[start..start + d]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRecord {
    pub id: u32,
    pub name: String,
    pub videos: Vec<FeatureVideo>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataOrigin {
    Synthetic,
    File,
}

/// Class-partitioned collection of equally shaped feature videos.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    shape: [usize; 3],
    classes: Vec<ClassRecord>,
    origin: DataOrigin,
}

impl FeatureDataset {
    pub fn new(shape: [usize; 3], classes: Vec<ClassRecord>, origin: DataOrigin) -> Result<Self, DataError> {
        let mut ids = HashSet::new();
        for class in &classes {
            if !ids.insert(class.id) {
                return Err(DataError::DuplicateClass(class.id));
            }
            for video in &class.videos {
                if video.shape() != shape {
                    return Err(DataError::ShapeMismatch {
                        expected: shape,
                        found: video.shape(),
                    });
                }
            }
        }
        Ok(Self {
            shape,
            classes,
            origin,
        })
    }

    /// `[frames, patches, channels]` shared by every video.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn classes(&self) -> &[ClassRecord] {
        &self.classes
    }

    pub fn origin(&self) -> DataOrigin {
        self.origin
    }

    pub fn n_videos(&self) -> usize {
        self.classes.iter().map(|c| c.videos.len()).sum()
    }

    /// Dataset restricted to the classes at the given positions, e.g. a
    /// disjoint train/test class split.
    pub fn select_classes(&self, positions: impl IntoIterator<Item = usize>) -> Self {
        Self {
            shape: self.shape,
            classes: positions.into_iter().map(|i| self.classes[i].clone()).collect(),
            origin: self.origin,
        }
    }

    /// Split into the first `n_first` classes and the remainder.
    pub fn split_classes(&self, n_first: usize) -> (Self, Self) {
        let n = self.classes.len();
        let k = n_first.min(n);
        (self.select_classes(0..k), self.select_classes(k..n))
    }
}
