//! Subject-dependent (leave-one-trial-slot-out) and leave-one-subject-out
//! evaluation, with normalization fit on training rows only.
//!
//! Accuracy is counted per test window; there is no vote per trial.

mod metrics;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{metrics, Metrics};

use crate::datamodel::{
    load_eog_recording, load_gaze_records, load_triggers, EogRecording, GazeRecord, TriggerLog, EOG_FILE, GAZE_FILE, N_CLASSES,
    TRIALS_PER_CONDITION, TRIGGER_FILE,
};
use crate::error::{Error, Result};
use crate::fusion::{assemble_segments, materialize, FeatureSegment, Modality, Piece, RawSegment};
use crate::gazeproc::{clean_records, GazeConfig};
use crate::nn::{predict, train, TrainConfig, TrainOutcome, WindowSet};
use crate::sigproc::{apply_zscore, fit_zscore_blocks, FilterConfig, NormParams};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub filter: FilterConfig,
    pub gaze: GazeConfig,
}

/// One subject's session cut into trial segments, ready for normalization.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject_id: String,
    pub segments: Vec<RawSegment>,
}

pub fn prepare_subject(
    subject_id: &str,
    eog: &EogRecording,
    gaze: &[GazeRecord],
    triggers: &TriggerLog,
    cfg: &PreprocessConfig,
) -> Result<SubjectData> {
    let table = clean_records(gaze, &cfg.gaze)?;
    let segments = assemble_segments(subject_id, eog, &table, triggers, &cfg.filter)?;
    Ok(SubjectData {
        subject_id: subject_id.to_string(),
        segments,
    })
}

/// Loads a subject folder; the folder name is the subject id.
pub fn load_subject(dir: &Path, cfg: &PreprocessConfig) -> Result<SubjectData> {
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Invalid(format!("cannot take a subject id from {}", dir.display())))?;
    let eog = load_eog_recording(&dir.join(EOG_FILE))?;
    let gaze = load_gaze_records(&dir.join(GAZE_FILE))?;
    let triggers = load_triggers(&dir.join(TRIGGER_FILE))?;
    prepare_subject(id, &eog, &gaze, &triggers, cfg).map_err(|e| e.context(format!("subject {id}")))
}

/// Every subfolder of `root` holding an EOG file, in name order, loaded in parallel.
pub fn load_dataset(root: &Path, cfg: &PreprocessConfig) -> Result<Vec<SubjectData>> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(EOG_FILE).is_file())
        .collect();
    if dirs.is_empty() {
        return Err(Error::Invalid(format!("no subject folders under {}", root.display())));
    }
    dirs.sort();
    dirs.par_iter().map(|d| load_subject(d, cfg)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Eight folds within each subject, one trial slot held out per fold.
    Dependent,
    /// Leave one subject out.
    Independent,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Dependent => "dependent",
            Scenario::Independent => "independent",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dependent" => Ok(Scenario::Dependent),
            "independent" => Ok(Scenario::Independent),
            _ => Err(Error::Parameter(format!("unknown scenario `{s}` (expected dependent or independent)"))),
        }
    }
}

/// Indices into a subject's segment list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub fold_id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold `k` tests on every condition's trial slot `k` and trains on the rest.
pub fn build_trial_folds(segments: &[RawSegment]) -> Result<Vec<Fold>> {
    let mut conditions: Vec<_> = segments.iter().map(|s| s.label).collect();
    conditions.sort_unstable();
    conditions.dedup();
    for c in &conditions {
        let mut slots: Vec<usize> = segments.iter().filter(|s| s.label == *c).map(|s| s.trial_slot).collect();
        slots.sort_unstable();
        if slots != (0..TRIALS_PER_CONDITION).collect::<Vec<_>>() {
            return Err(Error::Invalid(format!("condition {c} D has trial slots {slots:?}; each of 0..8 must appear once")));
        }
    }
    Ok((0..TRIALS_PER_CONDITION)
        .map(|k| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..segments.len()).partition(|&i| segments[i].trial_slot == k);
            Fold { fold_id: k, train, test }
        })
        .collect())
}

/// Random partition of `0..n` with `ceil(train_fraction · n)` items for training.
pub fn split_train_val(n: usize, train_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 items to split, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Parameter(format!("train fraction {train_fraction} outside (0, 1]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = ((train_fraction * n as f64).ceil() as usize).min(n);
    let val = idx.split_off(k);
    Ok((idx, val))
}

/// Normalization for both modalities, fit on filtered EOG samples and
/// cleaned eye-tracking rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormPair {
    pub eog: NormParams,
    pub gaze: NormParams,
}

pub fn fit_norm<'a>(segments: impl IntoIterator<Item = &'a RawSegment>) -> NormPair {
    let segs: Vec<&RawSegment> = segments.into_iter().collect();
    let eog: Vec<_> = segs.iter().flat_map(|s| s.eog_blocks()).collect();
    let gaze: Vec<_> = segs.iter().flat_map(|s| s.gaze_blocks()).collect();
    NormPair {
        eog: fit_zscore_blocks(&eog),
        gaze: fit_zscore_blocks(&gaze),
    }
}

/// Applies `norm` to the raw blocks, keeping NaN cells.
pub fn normalize_raw(seg: &RawSegment, norm: &NormPair) -> Result<RawSegment> {
    let pieces = seg
        .pieces
        .iter()
        .map(|p| {
            Ok(Piece {
                eog: apply_zscore(&p.eog.view(), &norm.eog)?,
                gaze: apply_zscore(&p.gaze.view(), &norm.gaze)?,
                ..p.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawSegment {
        pieces,
        ..seg.clone()
    })
}

/// Per-subject normalization over all of that subject's segments; the first
/// stage of the subject-independent protocol.
pub fn subject_norm(subject: &SubjectData) -> NormPair {
    fit_norm(&subject.segments)
}

/// Every segment of one subject, z-scored on that subject's whole session.
/// This is an export view; evaluation refits normalization per fold.
pub fn materialize_subject(subject: &SubjectData, modality: Modality) -> Result<Vec<FeatureSegment>> {
    materialize_all(&subject.segments, modality, &subject_norm(subject))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub train: TrainConfig,
    pub train_fraction: f64,
    /// Permute training-window labels; the chance-level control.
    pub shuffle_labels: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            train_fraction: 0.9,
            shuffle_labels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject_id: String,
    pub fold_id: usize,
    pub modality: Modality,
    /// Percent.
    pub accuracy: f64,
    /// Percent.
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub n_test_windows: usize,
}

/// A fold's result together with the normalization applied to its test data.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub result: FoldResult,
    pub norm: NormPair,
    pub best_epoch: usize,
}

/// Seed for one fold, stable across platforms and runs.
pub fn fold_seed(seed: u64, subject_id: &str, fold_id: usize, modality: Modality) -> u64 {
    // FNV-1a over the fold's identity, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let key = format!("{seed}/{subject_id}/{fold_id}/{}", modality.name());
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

fn materialize_all<'a>(
    segs: impl IntoIterator<Item = &'a RawSegment>,
    modality: Modality,
    norm: &NormPair,
) -> Result<Vec<FeatureSegment>> {
    segs.into_iter().map(|s| materialize(s, modality, &norm.eog, &norm.gaze)).collect()
}

/// Windows `train_segs`, optionally permutes their labels, holds out a
/// random validation share and trains.
fn fit(train_segs: Vec<FeatureSegment>, cfg: &EvalConfig, seed: u64) -> Result<TrainOutcome> {
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
    let mut pool = WindowSet::from_segments(train_segs, tc.window_len, tc.window_stride)?;
    if cfg.shuffle_labels {
        let mut labels = pool.labels();
        labels.shuffle(&mut rng);
        pool = pool.with_labels(&labels)?;
    }
    let (tr, va) = split_train_val(pool.len(), cfg.train_fraction, &mut rng)?;
    train(&pool.subset(&tr), &pool.subset(&va), &tc)
}

/// Trains on `train_segs`, evaluates the best-validation model on `test_segs`.
fn fit_and_score(
    train_segs: Vec<FeatureSegment>,
    test_segs: Vec<FeatureSegment>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(Metrics, usize, usize)> {
    let outcome = fit(train_segs, cfg, seed)?;
    let test = WindowSet::from_segments(test_segs, cfg.train.window_len, cfg.train.window_stride)?;
    if test.is_empty() {
        return Err(Error::Invalid("no test windows: segments shorter than the window".into()));
    }
    let preds: Vec<usize> = predict(&outcome.best_model, &test)?.into_iter().map(|p| p.class).collect();
    let m = metrics(&preds, &test.labels(), N_CLASSES)?;
    Ok((m, outcome.best_epoch, test.len()))
}

fn fold_result(subject_id: &str, fold_id: usize, modality: Modality, m: Metrics, n: usize) -> FoldResult {
    FoldResult {
        subject_id: subject_id.to_string(),
        fold_id,
        modality,
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        confusion: m.confusion,
        n_test_windows: n,
    }
}

/// Eight folds within one subject. Normalization is refit on each fold's
/// training segments and applied unchanged to its test segments.
pub fn run_subject_dependent(subject: &SubjectData, modality: Modality, cfg: &EvalConfig) -> Result<Vec<FoldRun>> {
    cfg.train.validate()?;
    let folds = build_trial_folds(&subject.segments).map_err(|e| e.context(format!("subject {}", subject.subject_id)))?;
    folds
        .par_iter()
        .map(|fold| {
            let run = || -> Result<FoldRun> {
                let train_raw: Vec<&RawSegment> = fold.train.iter().map(|&i| &subject.segments[i]).collect();
                let norm = fit_norm(train_raw.iter().copied());
                let train_segs = materialize_all(train_raw, modality, &norm)?;
                let test_segs = materialize_all(fold.test.iter().map(|&i| &subject.segments[i]), modality, &norm)?;
                let seed = fold_seed(cfg.train.seed, &subject.subject_id, fold.fold_id, modality);
                let (m, best_epoch, n) = fit_and_score(train_segs, test_segs, cfg, seed)?;
                log::info!("{} fold {} {}: accuracy {:.2}%", subject.subject_id, fold.fold_id, modality, m.accuracy);
                Ok(FoldRun {
                    result: fold_result(&subject.subject_id, fold.fold_id, modality, m, n),
                    norm,
                    best_epoch,
                })
            };
            run().map_err(|e| e.context(format!("subject {} fold {}", subject.subject_id, fold.fold_id)))
        })
        .collect()
}

/// Each subject's segments z-scored on that subject's own data.
fn prenormalize(subjects: &[SubjectData]) -> Result<Vec<Vec<RawSegment>>> {
    subjects
        .par_iter()
        .map(|s| {
            let norm = subject_norm(s);
            s.segments.iter().map(|seg| normalize_raw(seg, &norm)).collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// One model on every subject pooled, with the same two-stage normalization
/// as leave-one-subject-out. Returns the outcome and the second-stage
/// normalization a deployed model must apply after per-subject z-scoring.
pub fn train_pooled(subjects: &[SubjectData], modality: Modality, cfg: &EvalConfig) -> Result<(TrainOutcome, NormPair)> {
    cfg.train.validate()?;
    let prenormalized = prenormalize(subjects)?;
    let all: Vec<&RawSegment> = prenormalized.iter().flatten().collect();
    let norm = fit_norm(all.iter().copied());
    let segs = materialize_all(all, modality, &norm)?;
    Ok((fit(segs, cfg, cfg.train.seed)?, norm))
}

/// Leave-one-subject-out. Each subject is first z-scored on its own data;
/// a second normalization fit on the pooled, pre-normalized training
/// subjects is then applied to everyone, including the held-out subject.
/// Validation windows are sampled at random from the pooled training windows.
pub fn run_loso(subjects: &[SubjectData], modality: Modality, cfg: &EvalConfig) -> Result<Vec<FoldRun>> {
    cfg.train.validate()?;
    if subjects.len() < 3 {
        return Err(Error::Parameter(format!("leave-one-subject-out needs at least 3 subjects, got {}", subjects.len())));
    }
    let prenormalized = prenormalize(subjects)?;

    (0..subjects.len())
        .into_par_iter()
        .map(|held| {
            let id = &subjects[held].subject_id;
            let run = || -> Result<FoldRun> {
                let train_raw: Vec<&RawSegment> = prenormalized
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != held)
                    .flat_map(|(_, segs)| segs.iter())
                    .collect();
                let norm = fit_norm(train_raw.iter().copied());
                let train_segs = materialize_all(train_raw, modality, &norm)?;
                let test_segs = materialize_all(&prenormalized[held], modality, &norm)?;
                let seed = fold_seed(cfg.train.seed, id, 0, modality);
                let (m, best_epoch, n) = fit_and_score(train_segs, test_segs, cfg, seed)?;
                log::info!("held-out {id} {modality}: accuracy {:.2}%", m.accuracy);
                Ok(FoldRun {
                    result: fold_result(id, 0, modality, m, n),
                    norm,
                    best_epoch,
                })
            };
            run().map_err(|e| e.context(format!("held-out subject {id}")))
        })
        .collect()
}

/// Runs a scenario over every subject; dependent runs are concatenated in subject order.
pub fn run_scenario(subjects: &[SubjectData], scenario: Scenario, modality: Modality, cfg: &EvalConfig) -> Result<Vec<FoldRun>> {
    match scenario {
        Scenario::Dependent => {
            let mut out = Vec::new();
            for s in subjects {
                out.extend(run_subject_dependent(s, modality, cfg)?);
            }
            Ok(out)
        }
        Scenario::Independent => run_loso(subjects, modality, cfg),
    }
}

/// One JSON object per line.
pub fn write_fold_results(results: &[FoldResult], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_fold_results(path: &Path) -> Result<Vec<FoldResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// `subject,fold,accuracy,macro_f1`
pub fn write_summary_csv(results: &[FoldResult], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "subject,fold,accuracy,macro_f1").expect("write to Vec");
    for r in results {
        writeln!(out, "{},{},{},{}", r.subject_id, r.fold_id, r.accuracy, r.macro_f1).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean accuracy per subject, in first-appearance order.
pub fn subject_means(results: &[FoldResult]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in results {
        match out.iter_mut().find(|(s, _, _)| *s == r.subject_id) {
            Some(e) => {
                e.1 += r.accuracy;
                e.2 += 1;
            }
            None => out.push((r.subject_id.clone(), r.accuracy, 1)),
        }
    }
    out.into_iter().map(|(s, sum, n)| (s, sum / n as f64)).collect()
}

#[cfg(test)]
mod tests;
