use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};

use crate::datamodel::DiopterClass;
use crate::fusion::FeatureSegment;
use crate::error::{Error, Result};

/// Start offsets of every full window; empty when the series is shorter
/// than one window.
pub fn window_starts(n: usize, window_len: usize, stride: usize) -> Vec<usize> {
    if window_len == 0 || stride == 0 || window_len > n {
        return Vec::new();
    }
    (0..=n - window_len).step_by(stride).collect()
}

/// Sliding windows over one segment, each carrying the segment's label.
pub fn window_segments(seg: &FeatureSegment, window_len: usize, stride: usize) -> Vec<(ArrayView2<'_, f64>, DiopterClass)> {
    window_starts(seg.len(), window_len, stride)
        .into_iter()
        .map(|s0| (seg.matrix.slice(s![s0..s0 + window_len, ..]), seg.label))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub source: usize,
    pub start: usize,
    pub label: usize,
}

/// Windows referencing shared source matrices; cheap to subset and relabel.
#[derive(Debug, Clone)]
pub struct WindowSet {
    sources: Arc<Vec<Array2<f64>>>,
    windows: Vec<WindowRef>,
    window_len: usize,
    n_features: usize,
    /// Sources too short for a single window.
    pub skipped_sources: usize,
}

impl WindowSet {
    /// `sources` are `(matrix, class index)` pairs with equal widths.
    pub fn from_matrices(sources: Vec<(Array2<f64>, usize)>, window_len: usize, stride: usize) -> Result<Self> {
        let n_features = sources.first().map_or(0, |(m, _)| m.ncols());
        if let Some((m, _)) = sources.iter().find(|(m, _)| m.ncols() != n_features) {
            return Err(Error::Shape(format!("source widths differ: {} vs {n_features}", m.ncols())));
        }
        let mut windows = Vec::new();
        let mut skipped = 0;
        for (i, (m, label)) in sources.iter().enumerate() {
            let starts = window_starts(m.nrows(), window_len, stride);
            if starts.is_empty() {
                skipped += 1;
            }
            windows.extend(starts.into_iter().map(|start| WindowRef { source: i, start, label: *label }));
        }
        if skipped > 0 {
            log::warn!("{skipped} segments shorter than the {window_len}-sample window were skipped");
        }
        Ok(Self {
            sources: Arc::new(sources.into_iter().map(|(m, _)| m).collect()),
            windows,
            window_len,
            n_features,
            skipped_sources: skipped,
        })
    }

    pub fn from_segments(segments: Vec<FeatureSegment>, window_len: usize, stride: usize) -> Result<Self> {
        Self::from_matrices(
            segments.into_iter().map(|s| (s.matrix, s.label.index())).collect(),
            window_len,
            stride,
        )
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn refs(&self) -> &[WindowRef] {
        &self.windows
    }

    pub fn labels(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.label).collect()
    }

    pub fn window(&self, i: usize) -> ArrayView2<'_, f64> {
        let w = self.windows[i];
        self.sources[w.source].slice(s![w.start..w.start + self.window_len, ..])
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            sources: Arc::clone(&self.sources),
            windows: idx.iter().map(|&i| self.windows[i]).collect(),
            window_len: self.window_len,
            n_features: self.n_features,
            skipped_sources: 0,
        }
    }

    /// Same windows with replaced labels.
    pub fn with_labels(&self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!("{} labels for {} windows", labels.len(), self.len())));
        }
        let mut out = self.clone();
        for (w, &l) in out.windows.iter_mut().zip(labels) {
            w.label = l;
        }
        Ok(out)
    }

    /// Time-major packing (row `t·B + b`) of the selected windows, plus their labels.
    pub fn pack(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let b = idx.len();
        let mut x = Array2::zeros((self.window_len * b, self.n_features));
        for (bi, &i) in idx.iter().enumerate() {
            let w = self.window(i);
            for t in 0..self.window_len {
                x.row_mut(t * b + bi).assign(&w.row(t));
            }
        }
        (x, idx.iter().map(|&i| self.windows[i].label).collect())
    }
}
