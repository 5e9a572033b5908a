//! Core domain types and the three on-disk dataset formats.
//!
//! A subject folder holds `eog.csv`, `gaze.jsonl` and `triggers.csv`. All
//! three formats round-trip bit-exactly through their load/save pairs.

mod eog;
mod gaze;
mod segments;
mod triggers;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eog::{load_eog_recording, save_eog_recording, EogRecording, EOG_CHANNELS, EOG_FS};
pub use gaze::{
    load_gaze_records, save_gaze_records, GazeRecord, Stream, BLINK_KEYS, FIXATION_KEYS,
    GAZE_FS, GAZE_KEYS, PUPIL_2D_KEYS, PUPIL_3D_KEYS,
};
pub use segments::{annotate_segments, LabeledSegment, Span};
pub use triggers::{
    load_triggers, save_triggers, Task, TaskInstance, TriggerEvent, TriggerKind, TriggerLog,
    TriggerTime,
};

pub const N_CLASSES: usize = 13;

/// Fixation and pursuit trials per condition; also the number of trial slots.
pub const TRIALS_PER_CONDITION: usize = 8;

pub const EOG_FILE: &str = "eog.csv";
pub const GAZE_FILE: &str = "gaze.jsonl";
pub const TRIGGER_FILE: &str = "triggers.csv";

/// One of the 13 lens conditions, -3.0 D to +3.0 D in 0.5 D steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DiopterClass(u8);

impl DiopterClass {
    pub fn all() -> impl Iterator<Item = DiopterClass> {
        (0..N_CLASSES as u8).map(DiopterClass)
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index < N_CLASSES {
            Ok(DiopterClass(index as u8))
        } else {
            Err(Error::Invalid(format!("class index {index} out of 0..{N_CLASSES}")))
        }
    }

    /// Accepts only exact multiples of 0.5 within [-3, 3].
    pub fn from_diopter(diopter: f64) -> Result<Self> {
        let steps = (diopter + 3.0) * 2.0;
        if !steps.is_finite() || steps.fract() != 0.0 || !(0.0..=12.0).contains(&steps) {
            return Err(Error::Invalid(format!("diopter {diopter} is not a lens condition")));
        }
        Ok(DiopterClass(steps as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn diopter(self) -> f64 {
        -3.0 + 0.5 * f64::from(self.0)
    }
}

impl fmt::Display for DiopterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.diopter())
    }
}

impl TryFrom<f64> for DiopterClass {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        DiopterClass::from_diopter(value)
    }
}

impl From<DiopterClass> for f64 {
    fn from(value: DiopterClass) -> f64 {
        value.diopter()
    }
}
