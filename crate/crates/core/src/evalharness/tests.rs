use std::sync::OnceLock;

use super::*;
use crate::synthgen::DatasetSpec;

fn subjects() -> &'static [SubjectData] {
    static DATA: OnceLock<Vec<SubjectData>> = OnceLock::new();
    DATA.get_or_init(|| {
        let spec = DatasetSpec {
            n_subjects: 3,
            seed: 21,
            ..DatasetSpec::default()
        };
        spec.generate()
            .unwrap()
            .into_iter()
            .map(|(p, s)| prepare_subject(&p.subject_id, &s.eog, &s.gaze, &s.triggers, &PreprocessConfig::default()).unwrap())
            .collect()
    })
}

fn tiny_config() -> EvalConfig {
    EvalConfig {
        train: TrainConfig {
            epochs: 2,
            batch_size: 64,
            lr0: 3e-3,
            milestones: vec![],
            window_len: 60,
            window_stride: 60,
            hidden: 8,
            layers: 1,
            dropout: 0.0,
            ..TrainConfig::default()
        },
        ..EvalConfig::default()
    }
}

#[test]
fn folds_partition_the_segments() {
    let segs = &subjects()[0].segments;
    assert_eq!(segs.len(), 104);
    let folds = build_trial_folds(segs).unwrap();
    assert_eq!(folds.len(), 8);
    let mut seen = vec![0; segs.len()];
    for f in &folds {
        assert_eq!(f.test.len(), 13);
        assert_eq!(f.train.len(), 91);
        assert!(f.test.iter().all(|i| !f.train.contains(i)));
        for &i in &f.test {
            seen[i] += 1;
            assert_eq!(segs[i].trial_slot, f.fold_id);
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn missing_slot_is_an_error() {
    let mut segs = subjects()[0].segments.clone();
    segs.retain(|s| !(s.trial_slot == 3 && s.label.index() == 5));
    let e = build_trial_folds(&segs).unwrap_err().to_string();
    assert!(e.contains("trial slots"), "{e}");
}

#[test]
fn train_val_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = split_train_val(10, 0.9, &mut rng).unwrap();
    assert_eq!((a.len(), b.len()), (9, 1));
    let (c, d) = split_train_val(10, 0.9, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!((&a, &b), (&c, &d));
    let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(split_train_val(11, 0.9, &mut rng).unwrap().0.len(), 10);
    assert!(split_train_val(1, 0.9, &mut rng).is_err());
}

#[test]
fn fold_seeds_differ_by_identity() {
    let a = fold_seed(0, "S01", 0, Modality::Eog);
    assert_eq!(a, fold_seed(0, "S01", 0, Modality::Eog));
    assert_ne!(a, fold_seed(0, "S01", 1, Modality::Eog));
    assert_ne!(a, fold_seed(0, "S02", 0, Modality::Eog));
    assert_ne!(a, fold_seed(0, "S01", 0, Modality::Gaze));
    assert_ne!(a, fold_seed(1, "S01", 0, Modality::Eog));
}

#[test]
fn normalize_raw_then_refit_is_standard() {
    let s = &subjects()[0];
    let norm = subject_norm(s);
    let normalized: Vec<RawSegment> = s.segments.iter().map(|x| normalize_raw(x, &norm).unwrap()).collect();
    let again = fit_norm(&normalized);
    for (m, sd) in again.eog.mean.iter().zip(&again.eog.std).chain(again.gaze.mean.iter().zip(&again.gaze.std)) {
        assert!(m.abs() < 1e-9, "{m}");
        // constant columns keep the floor
        assert!((sd - 1.0).abs() < 1e-9 || *sd < 1e-6, "{sd}");
    }
}

#[test]
fn subject_dependent_run_is_consistent_and_deterministic() {
    let s = &subjects()[0];
    let cfg = tiny_config();
    let runs = run_subject_dependent(s, Modality::Eog, &cfg).unwrap();
    assert_eq!(runs.len(), 8);
    let folds = build_trial_folds(&s.segments).unwrap();
    for (run, fold) in runs.iter().zip(&folds) {
        let r = &run.result;
        let total: u64 = r.confusion.iter().flatten().sum();
        let trace: u64 = (0..13).map(|i| r.confusion[i][i]).sum();
        assert_eq!(total as usize, r.n_test_windows);
        assert_eq!(r.accuracy, 100.0 * trace as f64 / total as f64);
        // the applied normalization depends on training rows only
        assert_eq!(run.norm, fit_norm(fold.train.iter().map(|&i| &s.segments[i])));
        assert_ne!(run.norm, subject_norm(s));
    }
    let again = run_subject_dependent(s, Modality::Eog, &cfg).unwrap();
    for (a, b) in runs.iter().zip(&again) {
        assert_eq!(a.result, b.result);
    }
}

#[test]
fn loso_holds_out_each_subject_once() {
    let cfg = EvalConfig {
        train: TrainConfig {
            epochs: 1,
            ..tiny_config().train
        },
        ..tiny_config()
    };
    let runs = run_loso(subjects(), Modality::Gaze, &cfg).unwrap();
    let ids: Vec<&str> = runs.iter().map(|r| r.result.subject_id.as_str()).collect();
    assert_eq!(ids, vec!["S01", "S02", "S03"]);
    assert!(run_loso(&subjects()[..2], Modality::Gaze, &cfg).is_err());
}

#[test]
fn result_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = FoldResult {
        subject_id: "S01".into(),
        fold_id: 3,
        modality: Modality::Multimodal,
        accuracy: 100.0 / 3.0,
        macro_f1: 12.5,
        confusion: vec![vec![1; 13]; 13],
        n_test_windows: 169,
    };
    let path = dir.path().join("folds.jsonl");
    write_fold_results(&[r.clone(), r.clone()], &path).unwrap();
    assert_eq!(read_fold_results(&path).unwrap(), vec![r.clone(), r.clone()]);
    let csv = dir.path().join("summary.csv");
    write_summary_csv(&[r], &csv).unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("subject,fold,accuracy,macro_f1\nS01,3,33.33"));
}

#[test]
fn subject_means_average_folds() {
    let mk = |s: &str, a: f64| FoldResult {
        subject_id: s.into(),
        fold_id: 0,
        modality: Modality::Eog,
        accuracy: a,
        macro_f1: 0.0,
        confusion: vec![],
        n_test_windows: 0,
    };
    let m = subject_means(&[mk("A", 10.0), mk("B", 50.0), mk("A", 20.0)]);
    assert_eq!(m, vec![("A".to_string(), 15.0), ("B".to_string(), 50.0)]);
}

#[test]
fn scenario_parsing() {
    assert_eq!("dependent".parse::<Scenario>().unwrap(), Scenario::Dependent);
    assert_eq!("independent".parse::<Scenario>().unwrap(), Scenario::Independent);
    assert!("loso".parse::<Scenario>().is_err());
}
