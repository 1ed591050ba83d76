use std::fmt;
use std::sync::Arc;

use super::tensor::numel;
use super::{AutodiffError, Tensor};

/// One named block inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Contiguous, non-overlapping blocks covering `0..len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    len: usize,
}

impl Layout {
    pub fn new<S: Into<String>>(blocks: impl IntoIterator<Item = (S, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let entries = blocks
            .into_iter()
            .map(|(name, shape)| {
                let entry = LayoutEntry {
                    name: name.into(),
                    offset,
                    shape,
                };
                offset += entry.len();
                entry
            })
            .collect();
        Self {
            entries,
            len: offset,
        }
    }

    /// Rebuild from explicit entries, checking contiguity.
    pub fn from_entries(entries: Vec<LayoutEntry>) -> Result<Self, AutodiffError> {
        let mut expected = 0;
        for e in &entries {
            if e.offset != expected {
                return Err(AutodiffError::Layout(format!(
                    "entry `{}` starts at {} but the previous block ends at {}",
                    e.name, e.offset, expected
                )));
            }
            expected += e.len();
        }
        Ok(Self {
            entries,
            len: expected,
        })
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
            write!(f, "{}:[{}]@{}", e.name, dims.join("x"), e.offset)?;
        }
        Ok(())
    }
}

/// Flat parameter vector with named blocks. All derivatives with respect to
/// model parameters are expressed in this coordinate system.
#[derive(Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamVector")
            .field("layout", &self.layout.to_string())
            .field("values", &self.values)
            .finish()
    }
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if values.len() != layout.len() {
            return Err(AutodiffError::Layout(format!(
                "layout expects {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(self.layout.clone(), values)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &Self) -> Result<(), AutodiffError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(AutodiffError::Layout(format!(
                "layout mismatch: [{}] vs [{}]",
                self.layout, other.layout
            )))
        }
    }

    /// Block `name` as a tensor of its declared shape.
    pub fn block(&self, name: &str) -> Option<Tensor> {
        let e = self.layout.entry(name)?;
        Tensor::new(e.shape.clone(), self.values[e.range()].to_vec()).ok()
    }

    pub fn block_tensors(&self) -> Vec<Tensor> {
        self.layout
            .entries()
            .iter()
            .map(|e| Tensor::new(e.shape.clone(), self.values[e.range()].to_vec()).expect("layout"))
            .collect()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * alpha).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    /// Scale onto the Euclidean ball of radius `cap` if outside it.
    pub fn project_to_ball(&mut self, cap: f64) {
        let n = self.norm();
        if n > cap && n > 0.0 {
            let s = cap / n;
            self.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Name of the block holding flat index `i`.
    pub fn locate(&self, i: usize) -> Option<&str> {
        self.layout
            .entries()
            .iter()
            .find(|e| e.range().contains(&i))
            .map(|e| e.name.as_str())
    }
}
