use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureSegment, Modality};
use crate::datamodel::DiopterClass;
use crate::error::{Error, Result};

/// Sidecar written next to each segment CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub subject: String,
    pub diopter: DiopterClass,
    pub trial_slot: usize,
    pub modality: Modality,
}

/// Writes `path` (CSV, `rel_t` then feature columns) and `path` with a
/// `.json` extension holding the metadata.
pub fn save_segment(seg: &FeatureSegment, path: &Path) -> Result<()> {
    let mut out = String::from("rel_t");
    for name in seg.modality.feature_names() {
        out.push(',');
        out.push_str(&name);
    }
    out.push('\n');
    for (t, row) in seg.relative_timestamps.iter().zip(seg.matrix.rows()) {
        write!(out, "{t}").expect("write to String");
        for v in row {
            write!(out, ",{v}").expect("write to String");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    let meta = SegmentMeta {
        subject: seg.subject_id.clone(),
        diopter: seg.label,
        trial_slot: seg.trial_slot,
        modality: seg.modality,
    };
    let sidecar = path.with_extension("json");
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&sidecar, e))
}

pub fn load_segment(path: &Path) -> Result<FeatureSegment> {
    let sidecar = path.with_extension("json");
    let meta: SegmentMeta = serde_json::from_str(&fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let expected = std::iter::once("rel_t".to_string())
        .chain(meta.modality.feature_names())
        .collect::<Vec<_>>()
        .join(",");
    if header != expected {
        return Err(Error::format(path, format!("header does not match {} feature names", meta.modality)));
    }
    let width = meta.modality.width();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(Error::format(path, format!("line {}: expected {} fields, got {}", i + 2, width + 1, fields.len())));
        }
        for (k, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad number {f:?}", i + 2)))?;
            if k == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let matrix = Array2::from_shape_vec((times.len(), width), values).expect("row widths checked");
    FeatureSegment::new(meta.subject, meta.diopter, meta.trial_slot, meta.modality, times, matrix)
}
