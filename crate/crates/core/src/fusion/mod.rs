//! Trigger-relative alignment of the two modalities and the fused
//! 101-feature segment matrices.
//!
//! EOG features are linearly interpolated onto the eye-tracking timeline, so
//! every modality of a trial has the same row count.

mod assemble;
mod io;

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use assemble::{assemble_segments, materialize, Piece, RawSegment};
pub use io::{load_segment, save_segment, SegmentMeta};

use crate::datamodel::DiopterClass;
use crate::error::{Error, Result};
use crate::gazeproc::gaze_feature_names;
use crate::sigproc::eog_feature_names;

/// Largest timestamp disagreement tolerated when fusing.
pub const FUSE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eog,
    Gaze,
    Multimodal,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Eog, Modality::Gaze, Modality::Multimodal];

    pub fn width(self) -> usize {
        match self {
            Modality::Eog => 8,
            Modality::Gaze => 93,
            Modality::Multimodal => 101,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Eog => "eog",
            Modality::Gaze => "gaze",
            Modality::Multimodal => "multimodal",
        }
    }

    pub fn feature_names(self) -> Vec<String> {
        match self {
            Modality::Eog => eog_feature_names(),
            Modality::Gaze => gaze_feature_names(),
            Modality::Multimodal => {
                let mut names = eog_feature_names();
                names.extend(gaze_feature_names());
                names
            }
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown modality {s:?} (expected eog, gaze or multimodal)")))
    }
}

/// One labeled trial of one modality, ready for windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    pub subject_id: String,
    pub label: DiopterClass,
    pub trial_slot: usize,
    pub modality: Modality,
    pub relative_timestamps: Vec<f64>,
    /// `relative_timestamps.len() × modality.width()`
    pub matrix: Array2<f64>,
}

impl FeatureSegment {
    pub fn new(
        subject_id: impl Into<String>,
        label: DiopterClass,
        trial_slot: usize,
        modality: Modality,
        relative_timestamps: Vec<f64>,
        matrix: Array2<f64>,
    ) -> Result<Self> {
        if matrix.ncols() != modality.width() {
            return Err(Error::Shape(format!(
                "{modality} segment needs {} columns, got {}",
                modality.width(),
                matrix.ncols()
            )));
        }
        if matrix.nrows() != relative_timestamps.len() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} rows",
                relative_timestamps.len(),
                matrix.nrows()
            )));
        }
        if relative_timestamps.first().is_some_and(|&t| t < 0.0) || relative_timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("relative timestamps must start at >= 0 and increase strictly".into()));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            label,
            trial_slot,
            modality,
            relative_timestamps,
            matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.relative_timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relative_timestamps.is_empty()
    }
}

pub fn relative_time(timestamps: &[f64], task_start: f64) -> Vec<f64> {
    timestamps.iter().map(|t| t - task_start).collect()
}

/// Linear interpolation of every column of `source` (sampled at
/// `source_t`) onto `target_t`. Both time axes must be sorted.
pub fn resample_eog(source_t: &[f64], source: &ArrayView2<'_, f64>, target_t: &[f64]) -> Result<Array2<f64>> {
    if source_t.len() != source.nrows() {
        return Err(Error::Shape(format!("{} timestamps for {} rows", source_t.len(), source.nrows())));
    }
    let mut out = Array2::zeros((target_t.len(), source.ncols()));
    if target_t.is_empty() {
        return Ok(out);
    }
    let (lo, hi) = match (source_t.first(), source_t.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::Extrapolation { target: target_t[0], lo: f64::NAN, hi: f64::NAN }),
    };
    let mut j = 0;
    for (i, &t) in target_t.iter().enumerate() {
        if t < lo || t > hi {
            return Err(Error::Extrapolation { target: t, lo, hi });
        }
        while j + 1 < source_t.len() && source_t[j + 1] <= t {
            j += 1;
        }
        if source_t[j] == t || j + 1 == source_t.len() {
            out.row_mut(i).assign(&source.row(j));
            continue;
        }
        let w = (t - source_t[j]) / (source_t[j + 1] - source_t[j]);
        let (a, b) = (source.row(j), source.row(j + 1));
        for (k, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = a[k] + w * (b[k] - a[k]);
        }
    }
    Ok(out)
}

/// EOG columns first, then the gaze columns.
pub fn fuse(eog: &FeatureSegment, gaze: &FeatureSegment) -> Result<FeatureSegment> {
    if eog.modality != Modality::Eog || gaze.modality != Modality::Gaze {
        return Err(Error::Invalid(format!("fuse expects eog and gaze segments, got {} and {}", eog.modality, gaze.modality)));
    }
    if eog.label != gaze.label || eog.trial_slot != gaze.trial_slot || eog.subject_id != gaze.subject_id {
        return Err(Error::Invalid(format!(
            "segment identity mismatch: {} {} D slot {} vs {} {} D slot {}",
            eog.subject_id, eog.label, eog.trial_slot, gaze.subject_id, gaze.label, gaze.trial_slot
        )));
    }
    if eog.len() != gaze.len()
        || eog
            .relative_timestamps
            .iter()
            .zip(&gaze.relative_timestamps)
            .any(|(a, b)| (a - b).abs() > FUSE_TOLERANCE)
    {
        return Err(Error::Invalid("timestamp mismatch between eog and gaze segments".into()));
    }
    let matrix = concatenate(Axis(1), &[eog.matrix.view(), gaze.matrix.view()]).expect("row counts checked");
    FeatureSegment::new(
        eog.subject_id.clone(),
        eog.label,
        eog.trial_slot,
        Modality::Multimodal,
        gaze.relative_timestamps.clone(),
        matrix,
    )
}
