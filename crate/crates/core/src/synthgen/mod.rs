//! Synthetic multi-subject sessions with controllable class separability and
//! subject confounds.
//!
//! Every condition carries a latent class code of `N_CODE` dimensions. Four
//! dimensions set the amplitude of a slow oscillation on each EOG channel,
//! the rest shift pupil size, fixation depth and fixation dispersion:
//!
//! ```text
//! code(s, c) = class_effect_scale · u(c) + confound_scale · r(s, c)
//! ```
//!
//! `u(c)` is shared by everyone. `r(s, c)` is a per-subject, per-class
//! standard normal draw, so a large confound gives every subject its own
//! class-to-signal mapping: easy to learn within a subject, useless across
//! subjects. Subject offsets and gains that are shared across classes are
//! added on top; per-subject normalization removes those.

mod signals;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use signals::{class_code, N_CODE};

use crate::datamodel::{
    save_eog_recording, save_gaze_records, save_triggers, EogRecording, GazeRecord, TriggerLog, EOG_FILE, GAZE_FILE,
    TRIGGER_FILE,
};
use crate::error::{Error, Result};

/// Task durations in seconds. The interval between a fixation trial and its
/// pursuit trial is `inter_trial_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub fixation_s: f64,
    pub inter_trial_s: f64,
    pub pursuit_min_s: f64,
    pub pursuit_max_s: f64,
    /// Rest after each pursuit trial.
    pub post_pursuit_s: f64,
    pub reading_s: f64,
    /// Lens change between conditions.
    pub condition_gap_s: f64,
}

impl Schedule {
    /// Full-length session: 5 s fixations, 1.43–2.92 s pursuits, 40 s reading.
    pub fn full() -> Self {
        Self {
            fixation_s: 5.0,
            inter_trial_s: 1.0,
            pursuit_min_s: 1.43,
            pursuit_max_s: 2.92,
            post_pursuit_s: 1.0,
            reading_s: 40.0,
            condition_gap_s: 5.0,
        }
    }

    /// Same structure at about a third of the length, for tests and quick
    /// experiments. Every EOG span still exceeds two 0.5 s taper ramps.
    pub fn compact() -> Self {
        Self {
            fixation_s: 1.0,
            inter_trial_s: 0.5,
            pursuit_min_s: 1.1,
            pursuit_max_s: 1.6,
            post_pursuit_s: 0.5,
            reading_s: 8.0,
            condition_gap_s: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.fixation_s,
            self.inter_trial_s,
            self.pursuit_min_s,
            self.pursuit_max_s,
            self.post_pursuit_s,
            self.reading_s,
            self.condition_gap_s,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Parameter("schedule durations must be positive".into()));
        }
        if self.pursuit_max_s < self.pursuit_min_s {
            return Err(Error::Parameter("pursuit_max_s below pursuit_min_s".into()));
        }
        Ok(())
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub seed: u64,
    pub class_effect_scale: f64,
    pub confound_scale: f64,
    pub noise_sd: f64,
    pub clock_offset_eog: f64,
    pub clock_offset_gaze: f64,
    /// Low-confidence bursts per second and eye.
    pub confidence_dip_rate: f64,
    pub schedule: Schedule,
}

impl SubjectProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.class_effect_scale >= 0.0 && self.confound_scale >= 0.0) {
            return Err(Error::Parameter("effect and confound scales must be non-negative".into()));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Parameter("noise_sd must be positive".into()));
        }
        if !(self.confidence_dip_rate >= 0.0) {
            return Err(Error::Parameter("confidence_dip_rate must be non-negative".into()));
        }
        self.schedule.validate()
    }
}

/// One generated session, in the three datamodel formats.
#[derive(Debug, Clone)]
pub struct SynthSession {
    pub eog: EogRecording,
    pub gaze: Vec<GazeRecord>,
    pub triggers: TriggerLog,
}

pub fn generate_subject(profile: &SubjectProfile) -> Result<SynthSession> {
    profile.validate()?;
    signals::generate(profile)
}

/// Knobs shared by every subject of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_subjects: usize,
    pub class_effect_scale: f64,
    pub confound_scale: f64,
    pub noise_sd: f64,
    pub confidence_dip_rate: f64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_subjects: 4,
            class_effect_scale: 3.0,
            confound_scale: 0.0,
            noise_sd: 1.0,
            confidence_dip_rate: 0.05,
            seed: 0,
            schedule: Schedule::compact(),
        }
    }
}

fn subject_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer over (seed, index)
    let mut z = seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DatasetSpec {
    /// Profiles derived deterministically from the dataset seed.
    pub fn profiles(&self) -> Vec<SubjectProfile> {
        (0..self.n_subjects)
            .map(|i| {
                let seed = subject_seed(self.seed, i);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x000F_F5E7);
                SubjectProfile {
                    subject_id: format!("S{:02}", i + 1),
                    seed,
                    class_effect_scale: self.class_effect_scale,
                    confound_scale: self.confound_scale,
                    noise_sd: self.noise_sd,
                    clock_offset_eog: (rng.random_range(0.0..50.0) * 1e3f64).round() / 1e3,
                    clock_offset_gaze: (rng.random_range(1000.0..5000.0) * 1e3f64).round() / 1e3,
                    confidence_dip_rate: self.confidence_dip_rate,
                    schedule: self.schedule.clone(),
                }
            })
            .collect()
    }

    /// Sessions for every subject, generated in parallel.
    pub fn generate(&self) -> Result<Vec<(SubjectProfile, SynthSession)>> {
        if self.n_subjects == 0 {
            return Err(Error::Parameter("n_subjects must be at least 1".into()));
        }
        self.profiles()
            .into_par_iter()
            .map(|p| generate_subject(&p).map(|s| (p, s)))
            .collect()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub subjects: Vec<SubjectProfile>,
}

pub fn write_session(session: &SynthSession, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_eog_recording(&session.eog, &dir.join(EOG_FILE))?;
    save_gaze_records(&session.gaze, &dir.join(GAZE_FILE))?;
    save_triggers(&session.triggers, &dir.join(TRIGGER_FILE))
}

/// Writes one folder per subject plus `manifest.json`. Returns the subject folders.
pub fn generate_dataset(spec: &DatasetSpec, root: &Path) -> Result<Vec<PathBuf>> {
    if spec.n_subjects == 0 {
        return Err(Error::Parameter("n_subjects must be at least 1".into()));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let profiles = spec.profiles();
    // one subject in memory at a time per worker
    let dirs = profiles
        .par_iter()
        .map(|p| {
            let session = generate_subject(p)?;
            let dir = root.join(&p.subject_id);
            write_session(&session, &dir)?;
            Ok(dir)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        spec: spec.clone(),
        subjects: profiles,
    };
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(dirs)
}
