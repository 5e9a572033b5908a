use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are replaced by it.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormParams {
    pub fn width(&self) -> usize {
        self.mean.len()
    }
}

/// Whether normalization parameters are fit on the data at hand or supplied.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    Fit,
    Apply(&'a NormParams),
}

pub fn fit_zscore(x: &ArrayView2<'_, f64>) -> NormParams {
    fit_zscore_blocks(std::slice::from_ref(x))
}

/// Fits over the row-wise concatenation of `blocks`, skipping non-finite
/// cells. The result is bit-identical to fitting the concatenated matrix.
/// A column with no finite cells gets mean 0 and the std floor.
pub fn fit_zscore_blocks(blocks: &[ArrayView2<'_, f64>]) -> NormParams {
    let width = blocks.first().map_or(0, |b| b.ncols());
    let mut sum = vec![0.0; width];
    let mut count = vec![0usize; width];
    for b in blocks {
        for row in b.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v.is_finite() {
                    sum[j] += v;
                    count[j] += 1;
                }
            }
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    let mut sq = vec![0.0; width];
    for b in blocks {
        for row in b.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v.is_finite() {
                    let d = v - mean[j];
                    sq[j] += d * d;
                }
            }
        }
    }
    let std = sq
        .iter()
        .zip(&count)
        .map(|(s, &c)| {
            let sd = if c > 0 { (s / c as f64).sqrt() } else { 0.0 };
            if sd < STD_FLOOR {
                STD_FLOOR
            } else {
                sd
            }
        })
        .collect();
    NormParams { mean, std }
}

/// `(x - mean) / std` per column; non-finite cells stay non-finite.
pub fn apply_zscore(x: &ArrayView2<'_, f64>, p: &NormParams) -> Result<Array2<f64>> {
    if x.ncols() != p.width() {
        return Err(Error::Shape(format!(
            "matrix has {} columns, normalization has {}",
            x.ncols(),
            p.width()
        )));
    }
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - p.mean[j]) / p.std[j];
        }
    }
    Ok(out)
}
