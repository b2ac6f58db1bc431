//! Flat parameter vector with named segments.
//!
//! A `ParamStore` is the single owner of all parameters of one trainable
//! model. Layers reserve named segments at build time; optimizers walk the
//! flat vector; checkpoints serialize it against the store's signature.

use serde::{Deserialize, Serialize};

use super::graph::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Architecture signature: ordered segment layout plus the model's
/// input/output dimension record. Checkpoints are validated against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub segments: Vec<SegmentMeta>,
    pub input_dims: Vec<(String, usize)>,
    pub output_dims: Vec<(String, usize)>,
}

impl Signature {
    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.rows * s.cols).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    data: Vec<f64>,
    segments: Vec<SegmentMeta>,
    input_dims: Vec<(String, usize)>,
    output_dims: Vec<(String, usize)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            data: Vec::new(),
            segments: Vec::new(),
            input_dims: Vec::new(),
            output_dims: Vec::new(),
        }
    }

    /// Reserve a named rows x cols segment, filled by `init`.
    pub fn alloc(&mut self, name: &str, rows: usize, cols: usize, init: impl FnMut() -> f64) -> SegmentId {
        assert!(
            !self.segments.iter().any(|s| s.name == name),
            "duplicate segment name {name}"
        );
        let offset = self.data.len();
        let mut init = init;
        self.data.extend(std::iter::repeat_with(&mut init).take(rows * cols));
        self.segments.push(SegmentMeta {
            name: name.to_string(),
            rows,
            cols,
            offset,
        });
        SegmentId(self.segments.len() - 1)
    }

    pub fn declare_input(&mut self, name: &str, dim: usize) {
        self.input_dims.push((name.to_string(), dim));
    }

    pub fn declare_output(&mut self, name: &str, dim: usize) {
        self.output_dims.push((name.to_string(), dim));
    }

    pub fn signature(&self) -> Signature {
        Signature {
            segments: self.segments.clone(),
            input_dims: self.input_dims.clone(),
            output_dims: self.output_dims.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn set_data(&mut self, data: &[f64]) {
        assert_eq!(data.len(), self.data.len());
        self.data.copy_from_slice(data);
    }

    pub fn segments(&self) -> &[SegmentMeta] {
        &self.segments
    }

    pub fn segment(&self, id: SegmentId) -> &SegmentMeta {
        &self.segments[id.0]
    }

    pub fn segment_slice(&self, id: SegmentId) -> &[f64] {
        let s = &self.segments[id.0];
        &self.data[s.offset..s.offset + s.rows * s.cols]
    }

    /// Bind every segment as a gradient-tracked leaf on a tape.
    pub fn bind(&self, tape: &mut Tape) -> TapeParams {
        let ids = self
            .segments
            .iter()
            .map(|s| {
                tape.param_leaf(
                    s.rows,
                    s.cols,
                    self.data[s.offset..s.offset + s.rows * s.cols].to_vec(),
                )
            })
            .collect();
        TapeParams { ids }
    }

    /// Bind segments as constants (no-grad forward passes).
    pub fn bind_frozen(&self, tape: &mut Tape) -> TapeParams {
        let ids = self
            .segments
            .iter()
            .map(|s| {
                tape.constant(
                    s.rows,
                    s.cols,
                    self.data[s.offset..s.offset + s.rows * s.cols].to_vec(),
                )
            })
            .collect();
        TapeParams { ids }
    }

    /// Accumulate this tape's parameter gradients into `out` (same layout
    /// as the flat data vector).
    pub fn accumulate_grads(&self, tape: &Tape, bound: &TapeParams, out: &mut [f64]) {
        assert_eq!(out.len(), self.data.len());
        for (seg, &node) in self.segments.iter().zip(&bound.ids) {
            let g = tape.grad(node);
            if g.is_empty() {
                continue;
            }
            let dst = &mut out[seg.offset..seg.offset + seg.rows * seg.cols];
            for (d, &s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-tape node ids of every bound segment, indexed by `SegmentId`.
pub struct TapeParams {
    ids: Vec<NodeId>,
}

impl TapeParams {
    pub fn node(&self, id: SegmentId) -> NodeId {
        self.ids[id.0]
    }
}
