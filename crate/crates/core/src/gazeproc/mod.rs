//! Eye-tracking cleaning: per-stream flattening, alignment onto the eye0 2D
//! pupil timeline, confidence masking, Hampel and median filtering, and
//! z-scoring into the 93-column feature table.
//!
//! Invalid cells are carried as NaN from alignment through filtering. Only
//! the final imputation step turns them into numbers.

mod filters;

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use rayon::prelude::*;

pub use filters::{hampel, hampel_half_window, median, median_smooth};

use crate::datamodel::{GazeRecord, Stream, GAZE_FS};
use crate::error::{Error, Result};
use crate::sigproc::{apply_zscore, fit_zscore, NormMode, NormParams};

pub const GAZE_TABLE_WIDTH: usize = 93;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GazeConfig {
    pub fs: f64,
    pub confidence_threshold: f64,
    pub hampel_window_ms: f64,
    pub hampel_k: f64,
    /// Odd sample count of the median smoother.
    pub median_window: usize,
}

impl Default for GazeConfig {
    fn default() -> Self {
        Self {
            fs: GAZE_FS,
            confidence_threshold: 0.5,
            hampel_window_ms: 100.0,
            hampel_k: 3.0,
            median_window: 5,
        }
    }
}

/// Column block of each stream within the 93-column table.
pub fn stream_columns(stream: Stream) -> Range<usize> {
    match stream {
        Stream::PupilEye0_2d => 0..10,
        Stream::PupilEye0_3d => 10..37,
        Stream::PupilEye1_2d => 37..47,
        Stream::PupilEye1_3d => 47..74,
        Stream::Gaze => 74..85,
        Stream::Fixation => 85..92,
        Stream::Blink => 92..93,
    }
}

pub fn gaze_feature_names() -> Vec<String> {
    Stream::ALL
        .iter()
        .flat_map(|&s| {
            let prefix = match s {
                Stream::PupilEye0_2d | Stream::PupilEye0_3d => "eye0_",
                Stream::PupilEye1_2d | Stream::PupilEye1_3d => "eye1_",
                _ => "",
            };
            s.keys().iter().map(move |k| format!("{prefix}{k}"))
        })
        .collect()
}

/// Records of one stream as columns, sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTable {
    pub stream: Stream,
    pub timestamps: Vec<f64>,
    pub confidence: Vec<f64>,
    /// One column per schema key.
    pub columns: Vec<Vec<f64>>,
}

impl StreamTable {
    fn empty(stream: Stream) -> Self {
        Self {
            stream,
            timestamps: Vec::new(),
            confidence: Vec::new(),
            columns: vec![Vec::new(); stream.keys().len()],
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// One table per stream, indexed by `Stream::index()`.
pub fn flatten_records(records: &[GazeRecord]) -> Vec<StreamTable> {
    let mut by_stream: Vec<Vec<&GazeRecord>> = vec![Vec::new(); Stream::ALL.len()];
    for r in records {
        by_stream[r.stream.index()].push(r);
    }
    Stream::ALL
        .iter()
        .map(|&stream| {
            let mut recs = std::mem::take(&mut by_stream[stream.index()]);
            recs.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            let mut t = StreamTable::empty(stream);
            for r in recs {
                t.timestamps.push(r.timestamp);
                t.confidence.push(r.confidence);
                for (col, v) in t.columns.iter_mut().zip(&r.payload) {
                    col.push(*v);
                }
            }
            t
        })
        .collect()
}

/// The 93 eye-tracking features on the eye0 2D pupil timeline. NaN marks an
/// invalid cell. `confidence` holds, per stream, the confidence of the source
/// row each reference row drew from (NaN when nothing was drawn).
#[derive(Debug, Clone, PartialEq)]
pub struct GazeTable {
    pub timestamps: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
    pub confidence: Vec<Vec<f64>>,
}

impl GazeTable {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        !self.columns[col][row].is_nan()
    }

    /// Rows `range` as a dense `rows × 93` matrix.
    pub fn to_matrix(&self, range: Range<usize>) -> Array2<f64> {
        Array2::from_shape_fn((range.len(), self.columns.len()), |(i, j)| self.columns[j][range.start + i])
    }

    /// Index range of rows with timestamp in `[start, end]`.
    pub fn row_range(&self, start: f64, end: f64) -> Range<usize> {
        let lo = self.timestamps.partition_point(|&t| t < start);
        let hi = self.timestamps.partition_point(|&t| t <= end);
        lo..hi.max(lo)
    }
}

/// For each reference time, the index of the nearest source time (ties go to
/// the earlier source). Both inputs must be sorted.
fn nearest_indices(reference: &[f64], source: &[f64]) -> Vec<usize> {
    let mut j = 0;
    reference
        .iter()
        .map(|&t| {
            while j + 1 < source.len() && (source[j + 1] - t).abs() < (source[j] - t).abs() {
                j += 1;
            }
            j
        })
        .collect()
}

pub fn align_to_reference(tables: &[StreamTable]) -> Result<GazeTable> {
    let reference = &tables[Stream::PupilEye0_2d.index()];
    if reference.is_empty() {
        return Err(Error::Invalid("eye0 2D pupil stream is empty; no reference timeline".into()));
    }
    let ref_t = &reference.timestamps;
    let n = ref_t.len();
    let mut columns = vec![vec![f64::NAN; n]; GAZE_TABLE_WIDTH];
    let mut confidence = vec![vec![f64::NAN; n]; Stream::ALL.len()];

    for &stream in &Stream::ALL {
        let src = &tables[stream.index()];
        if src.is_empty() {
            continue;
        }
        let cols = stream_columns(stream);
        // source row feeding each reference row, if any
        let picks: Vec<Option<usize>> = match stream {
            Stream::Fixation => ref_t
                .iter()
                .map(|&t| {
                    let k = src.timestamps.partition_point(|&s| s <= t);
                    let idx = k.checked_sub(1)?;
                    let duration_s = src.columns[1][idx] / 1000.0;
                    (t <= src.timestamps[idx] + duration_s).then_some(idx)
                })
                .collect(),
            Stream::Blink => {
                let tol = 1.0 / GAZE_FS;
                nearest_indices(ref_t, &src.timestamps)
                    .into_iter()
                    .zip(ref_t)
                    .map(|(j, &t)| ((src.timestamps[j] - t).abs() <= tol).then_some(j))
                    .collect()
            }
            _ => nearest_indices(ref_t, &src.timestamps).into_iter().map(Some).collect(),
        };
        for (row, pick) in picks.into_iter().enumerate() {
            if let Some(j) = pick {
                confidence[stream.index()][row] = src.confidence[j];
                for (k, c) in cols.clone().enumerate() {
                    columns[c][row] = src.columns[k][j];
                }
            }
        }
    }

    Ok(GazeTable {
        timestamps: ref_t.clone(),
        columns,
        confidence,
    })
}

/// Invalidates a stream's columns on every row whose source confidence is
/// strictly below `threshold`.
pub fn mask_low_confidence(mut table: GazeTable, threshold: f64) -> GazeTable {
    for &stream in &Stream::ALL {
        let conf = &table.confidence[stream.index()];
        let low: Vec<usize> = (0..conf.len()).filter(|&r| conf[r] < threshold).collect();
        for c in stream_columns(stream) {
            for &r in &low {
                table.columns[c][r] = f64::NAN;
            }
        }
    }
    table
}

/// Hampel then median smoothing on every column.
pub fn filter_table(mut table: GazeTable, cfg: &GazeConfig) -> Result<GazeTable> {
    if cfg.median_window.is_multiple_of(2) {
        return Err(Error::Parameter(format!("median window {} must be odd", cfg.median_window)));
    }
    table.columns.par_iter_mut().for_each(|col| {
        let h = hampel(col, cfg.fs, cfg.hampel_window_ms, cfg.hampel_k);
        *col = median_smooth(&h, cfg.median_window).expect("window checked above");
    });
    Ok(table)
}

/// flatten → align → mask → Hampel → median, before normalization.
pub fn clean_records(records: &[GazeRecord], cfg: &GazeConfig) -> Result<GazeTable> {
    let aligned = align_to_reference(&flatten_records(records)).map_err(|e| Error::stage("align_to_reference", e))?;
    let masked = mask_low_confidence(aligned, cfg.confidence_threshold);
    filter_table(masked, cfg).map_err(|e| Error::stage("filter", e))
}

/// Forward-fill, then back-fill, then zero, per column.
pub fn impute(x: &mut Array2<f64>) {
    for mut col in x.columns_mut() {
        let mut last = None;
        for v in col.iter_mut() {
            if v.is_nan() {
                if let Some(l) = last {
                    *v = l;
                }
            } else {
                last = Some(*v);
            }
        }
        let first_valid = col.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
        for v in col.iter_mut() {
            if v.is_nan() {
                *v = first_valid;
            } else {
                break;
            }
        }
    }
}

/// Normalizes a cleaned block with fit or supplied params, then imputes.
pub fn normalize_and_impute(block: &ArrayView2<'_, f64>, norm: NormMode<'_>) -> Result<(Array2<f64>, NormParams)> {
    let params = match norm {
        NormMode::Fit => fit_zscore(block),
        NormMode::Apply(p) => p.clone(),
    };
    let mut z = apply_zscore(block, &params)?;
    impute(&mut z);
    Ok((z, params))
}

/// Full eye-tracking chain. The returned table has 93 dense, normalized
/// columns and no confidence data.
pub fn preprocess_gaze(records: &[GazeRecord], norm: NormMode<'_>, cfg: &GazeConfig) -> Result<(GazeTable, NormParams)> {
    let cleaned = clean_records(records, cfg)?;
    let block = cleaned.to_matrix(0..cleaned.len());
    let (z, params) = normalize_and_impute(&block.view(), norm).map_err(|e| Error::stage("zscore", e))?;
    let columns = z.columns().into_iter().map(|c| c.to_vec()).collect();
    Ok((
        GazeTable {
            timestamps: cleaned.timestamps,
            columns,
            confidence: Vec::new(),
        },
        params,
    ))
}
