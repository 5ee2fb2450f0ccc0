//! Flat parameter storage with named, shaped segments.
//!
//! All trainable weights live in one `Vec<f64>` so the optimizer, the
//! finite-difference checks, and checkpoint serialization can treat the
//! model as a single vector, while layers view their own slices.

use ndarray::{ArrayView1, ArrayView2, ArrayView4, ArrayViewMut2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct SegmentInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub seg: Segment,
}

#[derive(Debug, Clone)]
pub struct ParamVec {
    pub data: Vec<f64>,
    segments: Vec<SegmentInfo>,
}

impl ParamVec {
    pub fn builder() -> ParamVecBuilder {
        ParamVecBuilder { segments: Vec::new(), len: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn segment_named(&self, name: &str) -> Option<&SegmentInfo> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, seg: Segment) -> &[f64] {
        &self.data[seg.offset..seg.offset + seg.len]
    }

    pub fn view1(&self, seg: Segment) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(seg))
    }

    pub fn view2(&self, seg: Segment, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), self.slice(seg)).expect("segment shape")
    }

    pub fn view4(
        &self,
        seg: Segment,
        d0: usize,
        d1: usize,
        d2: usize,
        d3: usize,
    ) -> ArrayView4<'_, f64> {
        ArrayView4::from_shape((d0, d1, d2, d3), self.slice(seg)).expect("segment shape")
    }

    /// Overwrite one named segment, validating the shape against the layout.
    pub fn load_segment(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let info = self
            .segment_named(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown weight array '{name}'")))?
            .clone();
        if info.shape != shape || info.seg.len != values.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "array '{name}' has shape {:?} but the model expects {:?}",
                shape, info.shape
            )));
        }
        self.data[info.seg.offset..info.seg.offset + info.seg.len].copy_from_slice(values);
        Ok(())
    }
}

pub struct ParamVecBuilder {
    segments: Vec<SegmentInfo>,
    len: usize,
}

impl ParamVecBuilder {
    pub fn push(&mut self, name: &str, shape: &[usize]) -> Segment {
        let len: usize = shape.iter().product();
        let seg = Segment { offset: self.len, len };
        self.segments.push(SegmentInfo {
            name: name.to_string(),
            shape: shape.to_vec(),
            seg,
        });
        self.len += len;
        seg
    }

    pub fn build(self) -> ParamVec {
        ParamVec {
            data: vec![0.0; self.len],
            segments: self.segments,
        }
    }
}

/// Gradient buffer sharing a ParamVec's layout.
#[derive(Debug, Clone)]
pub struct GradVec {
    pub data: Vec<f64>,
}

impl GradVec {
    pub fn zeros_like(params: &ParamVec) -> Self {
        GradVec { data: vec![0.0; params.len()] }
    }

    pub fn slice_mut(&mut self, seg: Segment) -> &mut [f64] {
        &mut self.data[seg.offset..seg.offset + seg.len]
    }

    pub fn view2_mut(&mut self, seg: Segment, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((rows, cols), self.slice_mut(seg)).expect("segment shape")
    }

    pub fn add_scaled(&mut self, other: &GradVec, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }
}
