use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Nominal EOG sampling rate in Hz.
pub const EOG_FS: f64 = 512.0;

/// Channel order: left-horizontal, left-vertical, right-horizontal, right-vertical.
pub const EOG_CHANNELS: [&str; 4] = ["eog_lh", "eog_lv", "eog_rh", "eog_rv"];

const HEADER: &str = "t,eog_lh,eog_lv,eog_rh,eog_rv";

/// Raw 4-channel EOG stream in microvolts with timestamps in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EogRecording {
    pub subject_id: String,
    timestamps: Vec<f64>,
    channels: [Vec<f64>; 4],
}

impl EogRecording {
    pub fn new(subject_id: impl Into<String>, timestamps: Vec<f64>, channels: [Vec<f64>; 4]) -> Result<Self> {
        if let Some(c) = channels.iter().position(|c| c.len() != timestamps.len()) {
            return Err(Error::Shape(format!(
                "channel {} has {} samples, timestamps have {}",
                EOG_CHANNELS[c],
                channels[c].len(),
                timestamps.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(format!("non-monotone timestamp at sample {}", i + 1)));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            timestamps,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>; 4] {
        &self.channels
    }

    /// Index range of samples whose timestamp lies in `[start, end]`.
    pub fn sample_range(&self, start: f64, end: f64) -> std::ops::Range<usize> {
        let lo = self.timestamps.partition_point(|&t| t < start);
        let hi = self.timestamps.partition_point(|&t| t <= end);
        lo..hi.max(lo)
    }
}

pub fn load_eog_recording(path: &Path) -> Result<EogRecording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(Error::format(path, format!("line 1: expected header `{HEADER}`"))),
    }

    let mut timestamps = Vec::new();
    let mut channels: [Vec<f64>; 4] = Default::default();
    for (i, line) in lines {
        let lineno = i + 1;
        let mut fields = [0.0f64; 5];
        let mut count = 0;
        for (k, field) in line.split(',').enumerate() {
            if k >= 5 {
                count = k + 1;
                break;
            }
            fields[k] = field
                .parse()
                .map_err(|_| Error::format(path, format!("malformed value `{field}` at line {lineno}")))?;
            count = k + 1;
        }
        if count != 5 {
            return Err(Error::format(path, format!("wrong column count at line {lineno}")));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("non-finite value at line {lineno}")));
        }
        if let Some(&prev) = timestamps.last() {
            if !(fields[0] > prev) {
                return Err(Error::format(path, format!("non-monotone timestamp at line {lineno}")));
            }
        }
        timestamps.push(fields[0]);
        for (c, v) in channels.iter_mut().zip(&fields[1..]) {
            c.push(*v);
        }
    }

    let subject = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EogRecording::new(subject, timestamps, channels)
}

pub fn save_eog_recording(rec: &EogRecording, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(rec.len() * 64 + HEADER.len() + 1);
    out.push_str(HEADER);
    out.push('\n');
    for i in 0..rec.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            rec.timestamps[i], rec.channels[0][i], rec.channels[1][i], rec.channels[2][i], rec.channels[3][i]
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
