//! Cutting a preprocessed session into per-trial pieces, and turning pieces
//! into normalized feature segments once normalization parameters are known.
//!
//! A trial segment is made of three pieces: fixation plus the following
//! interval, the paired pursuit trial, and one eighth of the reading task.
//! EOG is filtered per task span, so each piece is aligned on its own and the
//! pieces are then laid end to end on a single relative time axis.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::{fuse, resample_eog, FeatureSegment, Modality};
use crate::datamodel::{annotate_segments, DiopterClass, EogRecording, Span, Task, TriggerLog, TriggerTime};
use crate::error::{Error, Result};
use crate::gazeproc::{impute, GazeTable};
use crate::sigproc::{apply_zscore, filter_channels, with_differentials, FilterConfig, NormParams};

/// One contiguous stretch of a trial on both clocks, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    /// EOG sample times relative to the task-start trigger.
    pub eog_rel_t: Vec<f64>,
    /// Filtered EOG channels, `n × 4`.
    pub eog: Array2<f64>,
    /// Eye-tracking row times relative to the same trigger.
    pub gaze_rel_t: Vec<f64>,
    /// Cleaned eye-tracking features, `m × 93`, NaN where invalid.
    pub gaze: Array2<f64>,
    /// Added to `gaze_rel_t` to place the piece on the segment time axis.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub subject_id: String,
    pub label: DiopterClass,
    pub trial_slot: usize,
    pub pieces: Vec<Piece>,
}

impl RawSegment {
    /// Output rows once materialized.
    pub fn n_rows(&self) -> usize {
        self.pieces.iter().map(|p| p.gaze_rel_t.len()).sum()
    }

    pub fn eog_blocks(&self) -> impl Iterator<Item = ArrayView2<'_, f64>> {
        self.pieces.iter().map(|p| p.eog.view())
    }

    pub fn gaze_blocks(&self) -> impl Iterator<Item = ArrayView2<'_, f64>> {
        self.pieces.iter().map(|p| p.gaze.view())
    }
}

/// Half-open index range of sorted `t` inside `[start, end)`.
fn index_range(t: &[f64], start: f64, end: f64) -> std::ops::Range<usize> {
    let lo = t.partition_point(|&v| v < start);
    let hi = t.partition_point(|&v| v < end);
    lo..hi.max(lo)
}

/// Filtered EOG over one task span.
struct FilteredSpan {
    timestamps: Vec<f64>,
    data: Array2<f64>,
}

fn filter_span(eog: &EogRecording, span: Span, cfg: &FilterConfig) -> Result<FilteredSpan> {
    let r = index_range(eog.timestamps(), span.start.eog, span.end.eog);
    let ch = eog.channels();
    let data = filter_channels(
        [&ch[0][r.clone()], &ch[1][r.clone()], &ch[2][r.clone()], &ch[3][r.clone()]],
        cfg,
    )?;
    Ok(FilteredSpan {
        timestamps: eog.timestamps()[r].to_vec(),
        data,
    })
}

fn cut_piece(filtered: &FilteredSpan, gaze: &GazeTable, span: Span, anchor: TriggerTime, offset: f64) -> Result<Piece> {
    let er = index_range(&filtered.timestamps, span.start.eog, span.end.eog);
    if er.len() < 2 {
        return Err(Error::Invalid("cannot form trial segment: span holds fewer than 2 EOG samples".into()));
    }
    let eog_rel_t: Vec<f64> = filtered.timestamps[er.clone()].iter().map(|t| t - anchor.eog).collect();
    let (lo, hi) = (eog_rel_t[0], eog_rel_t[eog_rel_t.len() - 1]);

    // eye-tracking rows inside the span and inside EOG coverage
    let gr = index_range(&gaze.timestamps, span.start.gaze, span.end.gaze);
    let rows: Vec<usize> = gr
        .filter(|&i| {
            let rel = gaze.timestamps[i] - anchor.gaze;
            rel >= lo && rel <= hi
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Invalid("cannot form trial segment: no eye-tracking rows in span".into()));
    }
    let gaze_rel_t = rows.iter().map(|&i| gaze.timestamps[i] - anchor.gaze).collect();
    let block = Array2::from_shape_fn((rows.len(), gaze.columns.len()), |(i, j)| gaze.columns[j][rows[i]]);
    Ok(Piece {
        eog_rel_t,
        eog: filtered.data.slice(s![er, ..]).to_owned(),
        gaze_rel_t,
        gaze: block,
        offset,
    })
}

/// Cuts a session into its labeled trial segments. `gaze` is the cleaned
/// (not yet normalized) table.
pub fn assemble_segments(
    subject_id: &str,
    eog: &EogRecording,
    gaze: &GazeTable,
    triggers: &TriggerLog,
    cfg: &FilterConfig,
) -> Result<Vec<RawSegment>> {
    let labeled = annotate_segments(triggers)?;

    // whole reading task per condition, filtered once
    let mut reading: BTreeMap<DiopterClass, FilteredSpan> = BTreeMap::new();
    for inst in triggers.instances().iter().filter(|i| i.task == Task::Reading) {
        let span = Span { start: inst.start, end: inst.end };
        let f = filter_span(eog, span, cfg).map_err(|e| e.context(format!("reading task of {} D", inst.condition)))?;
        reading.insert(inst.condition, f);
    }

    labeled
        .iter()
        .map(|seg| {
            let ctx = || format!("{} D trial slot {}", seg.condition, seg.trial_slot);
            let lead = Span { start: seg.fixation.start, end: seg.inter_trial.end };
            let lead_f = filter_span(eog, lead, cfg).map_err(|e| e.context(ctx()))?;
            let pursuit_f = filter_span(eog, seg.pursuit, cfg).map_err(|e| e.context(ctx()))?;

            let mut offset = 0.0;
            let a = cut_piece(&lead_f, gaze, lead, lead.start, offset)?;
            offset += lead.duration();
            let b = cut_piece(&pursuit_f, gaze, seg.pursuit, seg.pursuit.start, offset)?;
            offset += seg.pursuit.duration();
            // reading rows are timed from the reading task start; shift so the piece begins at `offset`
            let reading_rel_start = seg.reading.start.gaze - seg.reading_task_start.gaze;
            let c = cut_piece(
                &reading[&seg.condition],
                gaze,
                seg.reading,
                seg.reading_task_start,
                offset - reading_rel_start,
            )?;
            Ok(RawSegment {
                subject_id: subject_id.to_string(),
                label: seg.condition,
                trial_slot: seg.trial_slot,
                pieces: vec![a, b, c],
            })
        })
        .collect()
}

fn eog_features(seg: &RawSegment, norm: &NormParams) -> Result<Array2<f64>> {
    let parts = seg
        .pieces
        .iter()
        .map(|p| {
            let z = apply_zscore(&p.eog.view(), norm)?;
            resample_eog(&p.eog_rel_t, &with_differentials(&z).view(), &p.gaze_rel_t)
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("equal widths"))
}

fn gaze_features(seg: &RawSegment, norm: &NormParams) -> Result<Array2<f64>> {
    let parts = seg
        .pieces
        .iter()
        .map(|p| apply_zscore(&p.gaze.view(), norm))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let mut out = concatenate(Axis(0), &views).expect("equal widths");
    impute(&mut out);
    Ok(out)
}

/// Normalizes, differentiates, resamples and concatenates the pieces of a
/// segment into the feature matrix of `modality`.
pub fn materialize(seg: &RawSegment, modality: Modality, eog_norm: &NormParams, gaze_norm: &NormParams) -> Result<FeatureSegment> {
    let times: Vec<f64> = seg
        .pieces
        .iter()
        .flat_map(|p| p.gaze_rel_t.iter().map(move |t| t + p.offset))
        .collect();
    let make = |m: Modality, matrix| FeatureSegment::new(seg.subject_id.clone(), seg.label, seg.trial_slot, m, times.clone(), matrix);
    match modality {
        Modality::Eog => make(Modality::Eog, eog_features(seg, eog_norm)?),
        Modality::Gaze => make(Modality::Gaze, gaze_features(seg, gaze_norm)?),
        Modality::Multimodal => fuse(
            &make(Modality::Eog, eog_features(seg, eog_norm)?)?,
            &make(Modality::Gaze, gaze_features(seg, gaze_norm)?)?,
        ),
    }
}
