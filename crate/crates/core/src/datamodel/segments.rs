use super::{DiopterClass, Task, TaskInstance, TriggerLog, TriggerTime, TRIALS_PER_CONDITION};
use crate::error::{Error, Result};

/// A time interval on both device clocks, treated as half-open `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub start: TriggerTime,
    pub end: TriggerTime,
}

impl Span {
    pub fn duration(&self) -> f64 {
        self.end.gaze - self.start.gaze
    }
}

/// The evaluation unit: one fixation trial, the interval up to the paired
/// pursuit trial, that pursuit trial, and one eighth of the reading task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSegment {
    pub condition: DiopterClass,
    pub trial_slot: usize,
    pub fixation: Span,
    pub inter_trial: Span,
    pub pursuit: Span,
    pub reading: Span,
    /// Start trigger of the whole reading task; reading samples are timed relative to it.
    pub reading_task_start: TriggerTime,
}

impl LabeledSegment {
    pub fn spans(&self) -> [Span; 4] {
        [self.fixation, self.inter_trial, self.pursuit, self.reading]
    }
}

fn lerp(a: TriggerTime, b: TriggerTime, frac: f64) -> TriggerTime {
    TriggerTime {
        eog: a.eog + (b.eog - a.eog) * frac,
        gaze: a.gaze + (b.gaze - a.gaze) * frac,
    }
}

/// Groups each condition's i-th fixation, i-th pursuit (temporal order) and
/// i-th reading eighth into trial slot i. The final reading piece ends exactly
/// on the reading end trigger.
pub fn annotate_segments(triggers: &TriggerLog) -> Result<Vec<LabeledSegment>> {
    let mut out = Vec::with_capacity(triggers.conditions().len() * TRIALS_PER_CONDITION);
    for condition in triggers.conditions() {
        let of = |task: Task| -> Vec<&TaskInstance> {
            triggers
                .instances()
                .iter()
                .filter(|i| i.condition == condition && i.task == task)
                .collect()
        };
        let fixations = of(Task::Fixation);
        let pursuits = of(Task::Pursuit);
        let reading = of(Task::Reading);
        if fixations.len() != TRIALS_PER_CONDITION || pursuits.len() != TRIALS_PER_CONDITION || reading.len() != 1 {
            return Err(Error::Invalid(format!("cannot form trial segment: condition {condition} D lacks task instances")));
        }
        let reading = reading[0];

        for (slot, (fix, pur)) in fixations.iter().zip(&pursuits).enumerate() {
            if pur.start.eog < fix.end.eog || pur.start.gaze < fix.end.gaze {
                return Err(Error::Invalid(format!(
                    "cannot form trial segment: pursuit {slot} of {condition} D starts before its fixation ends"
                )));
            }
            let piece_start = lerp(reading.start, reading.end, slot as f64 / TRIALS_PER_CONDITION as f64);
            let piece_end = if slot + 1 == TRIALS_PER_CONDITION {
                reading.end
            } else {
                lerp(reading.start, reading.end, (slot + 1) as f64 / TRIALS_PER_CONDITION as f64)
            };
            out.push(LabeledSegment {
                condition,
                trial_slot: slot,
                fixation: Span { start: fix.start, end: fix.end },
                inter_trial: Span { start: fix.end, end: pur.start },
                pursuit: Span { start: pur.start, end: pur.end },
                reading: Span { start: piece_start, end: piece_end },
                reading_task_start: reading.start,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::triggers::tests::condition_events;
    use super::*;

    fn full_log() -> TriggerLog {
        let mut ev = Vec::new();
        let mut t = 3.0;
        for c in DiopterClass::all() {
            let (e, next) = condition_events(c, t);
            ev.extend(e);
            t = next;
        }
        TriggerLog::new(ev).unwrap()
    }

    #[test]
    fn full_log_gives_104_segments() {
        let segs = annotate_segments(&full_log()).unwrap();
        assert_eq!(segs.len(), 104);
        for c in DiopterClass::all() {
            let slots: Vec<_> = segs.iter().filter(|s| s.condition == c).map(|s| s.trial_slot).collect();
            assert_eq!(slots, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn forty_second_reading_splits_into_five_second_pieces() {
        let segs = annotate_segments(&full_log()).unwrap();
        let c = DiopterClass::from_index(4).unwrap();
        let pieces: Vec<_> = segs.iter().filter(|s| s.condition == c).map(|s| s.reading).collect();
        let total: f64 = pieces.iter().map(|p| p.duration()).sum();
        assert!((total - 40.0).abs() < 1.0 / 512.0);
        for p in &pieces {
            assert!((p.duration() - 5.0).abs() < 1e-9);
            assert!((p.end.eog - p.start.eog - 5.0).abs() < 1e-9);
        }
        for w in pieces.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn spans_are_ordered_and_disjoint() {
        let segs = annotate_segments(&full_log()).unwrap();
        for c in DiopterClass::all() {
            let mut spans: Vec<Span> = segs.iter().filter(|s| s.condition == c).flat_map(|s| s.spans()).collect();
            spans.sort_by(|a, b| a.start.eog.total_cmp(&b.start.eog));
            for w in spans.windows(2) {
                assert!(w[0].end.eog <= w[1].start.eog);
                assert!(w[0].end.gaze <= w[1].start.gaze);
            }
        }
    }

    #[test]
    fn pursuit_durations_across_full_range_accepted() {
        let c = DiopterClass::from_index(9).unwrap();
        let (mut ev, _) = condition_events(c, 0.0);
        // stretch pursuit ends to 1.43 s and 2.92 s
        for (k, e) in ev.iter_mut().enumerate() {
            if e.task == Task::Pursuit && e.kind == crate::datamodel::TriggerKind::TaskEnd {
                let d = if k % 4 == 3 { 1.43 } else { 2.92 };
                let start = e.time.eog - 2.0;
                e.time.eog = start + d;
                e.time.gaze = start + d + 100.0;
            }
        }
        let segs = annotate_segments(&TriggerLog::new(ev).unwrap()).unwrap();
        assert_eq!(segs.len(), 8);
        assert!(segs.iter().all(|s| (1.42..2.93).contains(&s.pursuit.duration())));
    }
}
