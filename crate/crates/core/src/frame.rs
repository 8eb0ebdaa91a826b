//! Per-frame field bundle: everything a keypoint network would emit for one
//! frame, plus optional ground truth.

use alloc::vec::Vec;

use crate::grid::{GridShape, Pose, ScalarField, VectorField2};
use crate::heatmap::HeatmapStack;
use crate::spatial::OrderRelation;
use crate::{Error, Result};

/// Appearance vector for one person instance.
///
/// `anchor` is the image location the vector was pooled around (the person
/// center); decoded poses pick up the embedding whose anchor is nearest to
/// their own center.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanEmbedding {
    pub person_id: Option<u32>,
    pub anchor: [f64; 2],
    pub vector: Vec<f64>,
}

impl HumanEmbedding {
    pub fn new(person_id: Option<u32>, anchor: [f64; 2], vector: Vec<f64>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("human embedding has non-finite entries"));
        }
        Ok(HumanEmbedding {
            person_id,
            anchor,
            vector,
        })
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub time_index: usize,
    pub heatmaps: HeatmapStack,
    pub ke: ScalarField,
    /// One map per [`OrderRelation::ALL`] entry, in that order.
    pub aux_maps: Vec<ScalarField>,
    pub svf: VectorField2,
    /// Forward temporal vector field over this frame's pixels.
    pub tvf_forward: Option<VectorField2>,
    /// Backward temporal vector field over the previous frame's pixels.
    pub tvf_backward: Option<VectorField2>,
    pub he_vectors: Vec<HumanEmbedding>,
    pub ground_truth: Option<Vec<Pose>>,
}

impl FrameBundle {
    pub fn shape(&self) -> GridShape {
        self.heatmaps.shape()
    }

    /// Checks that all fields share one grid and that the temporal fields
    /// come as a pair.
    pub fn validate(&self) -> Result<()> {
        let shape = self.shape();
        let same = |s: GridShape| -> Result<()> {
            if s != shape {
                return Err(Error::ShapeMismatch {
                    expected: (shape.height(), shape.width()),
                    found: (s.height(), s.width()),
                });
            }
            Ok(())
        };
        same(self.ke.shape())?;
        same(self.svf.shape())?;
        if self.aux_maps.len() != OrderRelation::ALL.len() {
            return Err(Error::invalid("expected six auxiliary ordinal maps"));
        }
        for m in &self.aux_maps {
            same(m.shape())?;
        }
        match (&self.tvf_forward, &self.tvf_backward) {
            (Some(f), Some(b)) => {
                same(f.shape())?;
                same(b.shape())?;
            }
            (None, None) => {}
            _ => return Err(Error::invalid("temporal vector fields must come as a pair")),
        }
        if let Some(first) = self.he_vectors.first() {
            if self.he_vectors.iter().any(|h| h.len() != first.len()) {
                return Err(Error::invalid("human embeddings differ in length"));
            }
        }
        Ok(())
    }

    pub fn has_predecessor(&self) -> bool {
        self.tvf_forward.is_some()
    }

    pub fn aux_map(&self, relation: OrderRelation) -> &ScalarField {
        &self.aux_maps[relation.index()]
    }
}
