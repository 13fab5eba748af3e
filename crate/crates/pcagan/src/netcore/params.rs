use crate::error::{Error, Result};
use nalgebra::{DMatrixView, DMatrixViewMut};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// One named block of a [`ParamVector`], stored column-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    /// Always `"column-major"`; recorded so checkpoints are self-describing.
    pub storage: String,
    pub slices: Vec<ParamSlice>,
}

impl ParamLayout {
    /// Packs the given `(name, rows, cols)` blocks back to back.
    pub fn packed(blocks: &[(&str, usize, usize)]) -> Self {
        let mut offset = 0;
        let slices = blocks
            .iter()
            .map(|&(name, rows, cols)| {
                let s = ParamSlice {
                    name: name.to_string(),
                    offset,
                    rows,
                    cols,
                };
                offset += rows * cols;
                s
            })
            .collect();
        Self {
            storage: "column-major".into(),
            slices,
        }
    }

    pub fn total_len(&self) -> usize {
        self.slices.iter().map(ParamSlice::len).sum()
    }

    /// Slices must be disjoint, cover `0..total_len` exactly, and be non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.storage != "column-major" {
            return Err(Error::invalid(format!(
                "unsupported parameter storage {:?}",
                self.storage
            )));
        }
        let mut ranges: Vec<Range<usize>> = self.slices.iter().map(ParamSlice::range).collect();
        ranges.sort_by_key(|r| r.start);
        let mut cursor = 0;
        for r in &ranges {
            if r.start != cursor {
                return Err(Error::invalid("parameter slices overlap or leave gaps"));
            }
            cursor = r.end;
        }
        if cursor == 0 {
            return Err(Error::invalid("parameter layout is empty"));
        }
        let mut names: Vec<&str> = self.slices.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate parameter slice name"));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

/// All trainable scalars of one network with named slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.total_len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} values but layout needs {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: ParamLayout) -> Result<Self> {
        let n = layout.total_len();
        Self::new(layout, vec![0.0; n])
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn slice_info(&self, name: &str) -> &ParamSlice {
        self.layout
            .get(name)
            .unwrap_or_else(|| panic!("no parameter slice named {name:?}"))
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        let r = self.slice_info(name).range();
        &self.values[r]
    }

    pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.slice_info(name).range();
        &mut self.values[r]
    }

    pub fn matrix(&self, name: &str) -> DMatrixView<'_, f64> {
        let s = self.slice_info(name);
        DMatrixView::from_slice(&self.values[s.range()], s.rows, s.cols)
    }

    pub fn matrix_mut(&mut self, name: &str) -> DMatrixViewMut<'_, f64> {
        let s = self.slice_info(name).clone();
        DMatrixViewMut::from_slice(&mut self.values[s.range()], s.rows, s.cols)
    }
}
