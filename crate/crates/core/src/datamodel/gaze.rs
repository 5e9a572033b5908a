use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Nominal eye-tracker sampling rate in Hz.
pub const GAZE_FS: f64 = 120.0;

/// Keys produced by the 2D pupil detector.
pub const PUPIL_2D_KEYS: [&str; 10] = [
    "diameter_2d",
    "norm_pos_x_2d",
    "norm_pos_y_2d",
    "ellipse_center_x_2d",
    "ellipse_center_y_2d",
    "ellipse_axis_a_2d",
    "ellipse_axis_b_2d",
    "ellipse_angle_2d",
    "location_x",
    "location_y",
];

/// Keys produced by the 3D eye model.
pub const PUPIL_3D_KEYS: [&str; 27] = [
    "diameter_2d_by_3d_detector",
    "diameter_3d",
    "norm_pos_x_3d",
    "norm_pos_y_3d",
    "ellipse_center_x_3d",
    "ellipse_center_y_3d",
    "ellipse_axis_a_3d",
    "ellipse_axis_b_3d",
    "ellipse_angle_3d",
    "sphere_center_x",
    "sphere_center_y",
    "sphere_center_z",
    "sphere_radius",
    "projected_sphere_center_x",
    "projected_sphere_center_y",
    "projected_sphere_axis_a",
    "projected_sphere_axis_b",
    "projected_sphere_angle",
    "circle_3d_center_x",
    "circle_3d_center_y",
    "circle_3d_center_z",
    "circle_3d_normal_x",
    "circle_3d_normal_y",
    "circle_3d_normal_z",
    "circle_3d_radius",
    "circle_3d_normal_theta",
    "circle_3d_normal_phi",
];

pub const GAZE_KEYS: [&str; 11] = [
    "gaze_origin_3d_x",
    "gaze_origin_3d_y",
    "gaze_origin_3d_z",
    "gaze_direction_3d_x",
    "gaze_direction_3d_y",
    "gaze_direction_3d_z",
    "gaze_point_3d_x",
    "gaze_point_3d_y",
    "gaze_point_3d_z",
    "gaze_norm_pos_x",
    "gaze_norm_pos_y",
];

/// `fixation_duration` is in milliseconds, as the tracker reports it.
pub const FIXATION_KEYS: [&str; 7] = [
    "fixation_dispersion",
    "fixation_duration",
    "fixation_norm_pos_x",
    "fixation_norm_pos_y",
    "fixation_point_3d_x",
    "fixation_point_3d_y",
    "fixation_point_3d_z",
];

/// `blink_type`: 0 = none, 1 = onset, 2 = offset.
pub const BLINK_KEYS: [&str; 1] = ["blink_type"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stream {
    PupilEye0_2d,
    PupilEye0_3d,
    PupilEye1_2d,
    PupilEye1_3d,
    Gaze,
    Fixation,
    Blink,
}

impl Stream {
    pub const ALL: [Stream; 7] = [
        Stream::PupilEye0_2d,
        Stream::PupilEye0_3d,
        Stream::PupilEye1_2d,
        Stream::PupilEye1_3d,
        Stream::Gaze,
        Stream::Fixation,
        Stream::Blink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::PupilEye0_2d => "pupil_eye0_2d",
            Stream::PupilEye0_3d => "pupil_eye0_3d",
            Stream::PupilEye1_2d => "pupil_eye1_2d",
            Stream::PupilEye1_3d => "pupil_eye1_3d",
            Stream::Gaze => "gaze",
            Stream::Fixation => "fixation",
            Stream::Blink => "blink",
        }
    }

    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Stream::PupilEye0_2d | Stream::PupilEye1_2d => &PUPIL_2D_KEYS,
            Stream::PupilEye0_3d | Stream::PupilEye1_3d => &PUPIL_3D_KEYS,
            Stream::Gaze => &GAZE_KEYS,
            Stream::Fixation => &FIXATION_KEYS,
            Stream::Blink => &BLINK_KEYS,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stream::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown stream `{s}`")))
    }
}

/// One eye-tracker datum. `payload` holds values in `stream.keys()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeRecord {
    pub stream: Stream,
    pub timestamp: f64,
    pub confidence: f64,
    pub payload: Vec<f64>,
}

impl GazeRecord {
    pub fn new(stream: Stream, timestamp: f64, confidence: f64, payload: Vec<f64>) -> Result<Self> {
        let rec = GazeRecord {
            stream,
            timestamp,
            confidence,
            payload,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Invalid(format!("{}: confidence out of [0,1]", self.stream)));
        }
        if !self.timestamp.is_finite() {
            return Err(Error::Invalid(format!("{}: non-finite timestamp", self.stream)));
        }
        let keys = self.stream.keys();
        if self.payload.len() != keys.len() {
            return Err(Error::Invalid(format!(
                "{}: payload has {} values, schema has {}",
                self.stream,
                self.payload.len(),
                keys.len()
            )));
        }
        if let Some(k) = self.payload.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("{}: non-finite value for key `{}`", self.stream, keys[k])));
        }
        if self.stream == Stream::Blink && ![0.0, 1.0, 2.0].contains(&self.payload[0]) {
            return Err(Error::Invalid(format!("{}: blink_type must be 0, 1 or 2", self.stream)));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.stream.keys().iter().position(|k| *k == key).map(|i| self.payload[i])
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    stream: String,
    t: f64,
    confidence: f64,
    payload: BTreeMap<String, f64>,
}

fn parse_line(line: &str) -> Result<GazeRecord> {
    let raw: RawLine = serde_json::from_str(line).map_err(|e| Error::Invalid(e.to_string()))?;
    let stream: Stream = raw.stream.parse()?;
    let keys = stream.keys();
    if let Some(unknown) = raw.payload.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(Error::Invalid(format!("{stream}: unknown key `{unknown}`")));
    }
    let payload = keys
        .iter()
        .map(|k| {
            raw.payload
                .get(*k)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("{stream}: missing key `{k}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    GazeRecord::new(stream, raw.t, raw.confidence, payload)
}

pub fn load_gaze_records(path: &Path) -> Result<Vec<GazeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Writes one JSON object per record, payload keys in schema order.
pub fn save_gaze_records(records: &[GazeRecord], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 256);
    for r in records {
        let _ = write!(
            out,
            "{{\"stream\":\"{}\",\"t\":{},\"confidence\":{},\"payload\":{{",
            r.stream, r.timestamp, r.confidence
        );
        for (k, (key, v)) in r.stream.keys().iter().zip(&r.payload).enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "\"{key}\":{v}");
        }
        out.push_str("}}\n");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye0_2d_line(conf: &str) -> String {
        let payload: Vec<String> = PUPIL_2D_KEYS.iter().enumerate().map(|(i, k)| format!("\"{k}\": {}", i as f64 + 0.5)).collect();
        format!(
            "{{\"stream\": \"pupil_eye0_2d\", \"t\": 12.5, \"confidence\": {conf}, \"payload\": {{{}}}}}",
            payload.join(", ")
        )
    }

    #[test]
    fn schema_sizes_match_feature_groups() {
        assert_eq!(PUPIL_2D_KEYS.len() + PUPIL_3D_KEYS.len(), 37);
        assert_eq!(GAZE_KEYS.len(), 11);
        assert_eq!(FIXATION_KEYS.len(), 7);
        assert_eq!(BLINK_KEYS.len(), 1);
    }

    #[test]
    fn single_pupil_line() {
        let rec = parse_line(&eye0_2d_line("0.9")).unwrap();
        assert_eq!(rec.stream, Stream::PupilEye0_2d);
        assert_eq!(rec.timestamp, 12.5);
        assert_eq!(rec.get("ellipse_center_x_2d"), Some(3.5));
    }

    #[test]
    fn confidence_out_of_range() {
        let err = parse_line(&eye0_2d_line("1.2")).unwrap_err().to_string();
        assert!(err.contains("confidence out of [0,1]"), "{err}");
    }

    #[test]
    fn unknown_and_missing_keys_name_stream_and_key() {
        let line = r#"{"stream":"blink","t":1,"confidence":1,"payload":{"blink_type":0,"sphere_radius":3}}"#;
        let err = parse_line(line).unwrap_err().to_string();
        assert!(err.contains("blink") && err.contains("sphere_radius"), "{err}");

        let line = r#"{"stream":"blink","t":1,"confidence":1,"payload":{}}"#;
        let err = parse_line(line).unwrap_err().to_string();
        assert!(err.contains("blink") && err.contains("blink_type"), "{err}");

        let line = r#"{"stream":"pupil_eye2_2d","t":1,"confidence":1,"payload":{}}"#;
        assert!(parse_line(line).is_err());
    }

    #[test]
    fn save_then_load_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gaze.jsonl");
        let recs = vec![
            GazeRecord::new(Stream::Blink, 0.1, 1.0, vec![2.0]).unwrap(),
            GazeRecord::new(Stream::Fixation, 0.2, 0.75, (0..7).map(|i| i as f64 * 0.1).collect()).unwrap(),
        ];
        save_gaze_records(&recs, &p).unwrap();
        let back = load_gaze_records(&p).unwrap();
        assert_eq!(back, recs);
        let bytes = fs::read(&p).unwrap();
        save_gaze_records(&back, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
    }
}
