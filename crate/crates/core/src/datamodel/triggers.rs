use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DiopterClass, TRIALS_PER_CONDITION};
use crate::error::{Error, Result};

const HEADER: &str = "t_eog,t_gaze,kind,task,trial_index,diopter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TriggerKind {
    TaskStart,
    TaskEnd,
}

impl TriggerKind {
    pub fn name(self) -> &'static str {
        match self {
            TriggerKind::TaskStart => "task_start",
            TriggerKind::TaskEnd => "task_end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Fixation,
    Pursuit,
    Reading,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Fixation => "fixation",
            Task::Pursuit => "pursuit",
            Task::Reading => "reading",
        }
    }

    /// Instances of this task per lens condition.
    pub fn per_condition(self) -> usize {
        match self {
            Task::Fixation | Task::Pursuit => TRIALS_PER_CONDITION,
            Task::Reading => 1,
        }
    }
}

/// The same physical instant on the two unsynchronized device clocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerTime {
    pub eog: f64,
    pub gaze: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerEvent {
    pub time: TriggerTime,
    pub kind: TriggerKind,
    pub task: Task,
    pub trial_index: u32,
    pub condition: DiopterClass,
}

/// A matched start/end pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskInstance {
    pub condition: DiopterClass,
    pub task: Task,
    pub trial_index: u32,
    pub start: TriggerTime,
    pub end: TriggerTime,
}

impl TaskInstance {
    pub fn duration(&self) -> f64 {
        self.end.gaze - self.start.gaze
    }
}

/// Validated trigger log: properly nested, non-overlapping start/end pairs and
/// complete per-condition task counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerLog {
    events: Vec<TriggerEvent>,
    instances: Vec<TaskInstance>,
}

impl TriggerLog {
    pub fn new(events: Vec<TriggerEvent>) -> Result<Self> {
        let mut instances = Vec::with_capacity(events.len() / 2);
        let mut open: Option<&TriggerEvent> = None;
        let mut last: Option<TriggerTime> = None;

        for ev in &events {
            if let Some(prev) = last {
                if ev.time.eog < prev.eog || ev.time.gaze < prev.gaze {
                    return Err(Error::Invalid("trigger timestamps go backwards".into()));
                }
            }
            last = Some(ev.time);
            match (ev.kind, open) {
                (TriggerKind::TaskStart, None) => open = Some(ev),
                (TriggerKind::TaskEnd, Some(s))
                    if s.task == ev.task && s.trial_index == ev.trial_index && s.condition == ev.condition =>
                {
                    instances.push(TaskInstance {
                        condition: s.condition,
                        task: s.task,
                        trial_index: s.trial_index,
                        start: s.time,
                        end: ev.time,
                    });
                    open = None;
                }
                _ => {
                    return Err(Error::Invalid(format!(
                        "unpaired trigger: {} {} trial {} at t_eog={}",
                        ev.kind.name(),
                        ev.task.name(),
                        ev.trial_index,
                        ev.time.eog
                    )))
                }
            }
        }
        if let Some(s) = open {
            return Err(Error::Invalid(format!(
                "unpaired trigger: {} trial {} never ends",
                s.task.name(),
                s.trial_index
            )));
        }

        let mut per_condition: BTreeMap<DiopterClass, BTreeMap<Task, Vec<u32>>> = BTreeMap::new();
        for inst in &instances {
            per_condition
                .entry(inst.condition)
                .or_default()
                .entry(inst.task)
                .or_default()
                .push(inst.trial_index);
        }
        for (condition, tasks) in &per_condition {
            for task in [Task::Fixation, Task::Pursuit, Task::Reading] {
                let mut idx = tasks.get(&task).cloned().unwrap_or_default();
                idx.sort_unstable();
                let expected: Vec<u32> = (0..task.per_condition() as u32).collect();
                if idx != expected {
                    return Err(Error::Invalid(format!(
                        "condition incomplete: {condition} D has {} {} instances (trial indices {:?})",
                        idx.len(),
                        task.name(),
                        idx
                    )));
                }
            }
        }

        Ok(Self { events, instances })
    }

    pub fn events(&self) -> &[TriggerEvent] {
        &self.events
    }

    /// Paired task instances in temporal order.
    pub fn instances(&self) -> &[TaskInstance] {
        &self.instances
    }

    pub fn conditions(&self) -> Vec<DiopterClass> {
        let mut c: Vec<_> = self.instances.iter().map(|i| i.condition).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

fn parse_kind(s: &str) -> Option<TriggerKind> {
    [TriggerKind::TaskStart, TriggerKind::TaskEnd].into_iter().find(|k| k.name() == s)
}

fn parse_task(s: &str) -> Option<Task> {
    [Task::Fixation, Task::Pursuit, Task::Reading].into_iter().find(|k| k.name() == s)
}

fn parse_event(line: &str) -> std::result::Result<TriggerEvent, String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 6 {
        return Err("wrong column count".into());
    }
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(format!("malformed value `{s}`"));
    Ok(TriggerEvent {
        time: TriggerTime {
            eog: num(f[0])?,
            gaze: num(f[1])?,
        },
        kind: parse_kind(f[2]).ok_or(format!("unknown kind `{}`", f[2]))?,
        task: parse_task(f[3]).ok_or(format!("unknown task `{}`", f[3]))?,
        trial_index: f[4].parse().map_err(|_| format!("malformed trial index `{}`", f[4]))?,
        condition: DiopterClass::from_diopter(num(f[5])?).map_err(|e| e.to_string())?,
    })
}

pub fn load_triggers(path: &Path) -> Result<TriggerLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(Error::format(path, format!("line 1: expected header `{HEADER}`"))),
    }
    let events = lines
        .map(|(i, l)| parse_event(l).map_err(|m| Error::format(path, format!("{m} at line {}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    TriggerLog::new(events).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_triggers(log: &TriggerLog, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(log.events.len() * 48);
    out.push_str(HEADER);
    out.push('\n');
    for e in &log.events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.time.eog,
            e.time.gaze,
            e.kind.name(),
            e.task.name(),
            e.trial_index,
            e.condition
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// One condition's worth of paired events starting at `t0`, 8 fixation/pursuit pairs then reading.
    pub(crate) fn condition_events(condition: DiopterClass, t0: f64) -> (Vec<TriggerEvent>, f64) {
        let mut ev = Vec::new();
        let mut t = t0;
        let mut push = |t: f64, kind, task, trial| {
            ev.push(TriggerEvent {
                time: TriggerTime { eog: t, gaze: t + 100.0 },
                kind,
                task,
                trial_index: trial,
                condition,
            })
        };
        for trial in 0..8 {
            push(t, TriggerKind::TaskStart, Task::Fixation, trial);
            push(t + 5.0, TriggerKind::TaskEnd, Task::Fixation, trial);
            t += 6.0;
            push(t, TriggerKind::TaskStart, Task::Pursuit, trial);
            push(t + 2.0, TriggerKind::TaskEnd, Task::Pursuit, trial);
            t += 3.0;
        }
        push(t, TriggerKind::TaskStart, Task::Reading, 0);
        push(t + 40.0, TriggerKind::TaskEnd, Task::Reading, 0);
        (ev, t + 42.0)
    }

    #[test]
    fn single_condition_is_valid() {
        let c = DiopterClass::from_diopter(-1.5).unwrap();
        let (ev, _) = condition_events(c, 0.0);
        let log = TriggerLog::new(ev).unwrap();
        assert_eq!(log.instances().len(), 17);
        assert_eq!(log.conditions(), vec![c]);
    }

    #[test]
    fn start_without_end_is_unpaired() {
        let c = DiopterClass::from_index(3).unwrap();
        let (mut ev, _) = condition_events(c, 0.0);
        ev.pop();
        let err = TriggerLog::new(ev).unwrap_err().to_string();
        assert!(err.contains("unpaired trigger"), "{err}");
    }

    #[test]
    fn overlapping_tasks_are_unpaired() {
        let c = DiopterClass::from_index(3).unwrap();
        let (mut ev, _) = condition_events(c, 0.0);
        ev.swap(1, 2);
        ev[1].time = ev[0].time;
        ev[2].time = ev[0].time;
        assert!(TriggerLog::new(ev).unwrap_err().to_string().contains("unpaired trigger"));
    }

    #[test]
    fn missing_pursuit_is_incomplete() {
        let c = DiopterClass::from_index(3).unwrap();
        let (mut ev, _) = condition_events(c, 0.0);
        ev.drain(2..4);
        let err = TriggerLog::new(ev).unwrap_err().to_string();
        assert!(err.contains("condition incomplete"), "{err}");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("triggers.csv");
        let (mut ev, t) = condition_events(DiopterClass::from_index(0).unwrap(), 0.1);
        ev.extend(condition_events(DiopterClass::from_index(12).unwrap(), t).0);
        let log = TriggerLog::new(ev).unwrap();
        save_triggers(&log, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = load_triggers(&p).unwrap();
        assert_eq!(back, log);
        save_triggers(&back, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("triggers.csv");
        fs::write(&p, format!("{HEADER}\n0,1,task_start,fixation,0,0.3\n")).unwrap();
        let err = load_triggers(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
