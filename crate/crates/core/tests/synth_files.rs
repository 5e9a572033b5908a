//! Generated datasets go through the same loaders and validators as
//! recorded ones.

use refrakt_core::datamodel::{load_eog_recording, load_gaze_records, load_triggers, Task, EOG_FILE, GAZE_FILE, TRIGGER_FILE};
use refrakt_core::evalharness::{load_dataset, PreprocessConfig};
use refrakt_core::synthgen::{generate_dataset, DatasetSpec, Schedule, MANIFEST_FILE};

#[test]
fn generated_folders_load_and_segment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        n_subjects: 3,
        seed: 21,
        ..DatasetSpec::default()
    };
    let dirs = generate_dataset(&spec, dir.path()).unwrap();
    assert_eq!(dirs.len(), 3);
    assert!(dir.path().join(MANIFEST_FILE).is_file());
    let subjects = load_dataset(dir.path(), &PreprocessConfig::default()).unwrap();
    let ids: Vec<_> = subjects.iter().map(|s| s.subject_id.as_str()).collect();
    assert_eq!(ids, ["S01", "S02", "S03"]);
    for s in &subjects {
        // 13 conditions x 8 fixation/pursuit pairs
        assert_eq!(s.segments.len(), 104);
    }
}

#[test]
fn full_schedule_session_honors_task_timing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        n_subjects: 1,
        seed: 3,
        schedule: Schedule::full(),
        ..DatasetSpec::default()
    };
    let sub = generate_dataset(&spec, dir.path()).unwrap().remove(0);
    let eog = load_eog_recording(&sub.join(EOG_FILE)).unwrap();
    let gaze = load_gaze_records(&sub.join(GAZE_FILE)).unwrap();
    let triggers = load_triggers(&sub.join(TRIGGER_FILE)).unwrap();
    assert!(!eog.is_empty() && !gaze.is_empty());
    for inst in triggers.instances() {
        let d = inst.duration();
        match inst.task {
            Task::Fixation => assert!((d - 5.0).abs() < 1e-3, "fixation {d}"),
            Task::Pursuit => assert!((1.43 - 1e-3..=2.92 + 1e-3).contains(&d), "pursuit {d}"),
            Task::Reading => assert!((d - 40.0).abs() < 1e-3, "reading {d}"),
        }
    }
    assert_eq!(triggers.instances().len(), 13 * 17);
}
