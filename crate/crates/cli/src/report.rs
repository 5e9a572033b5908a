//! Figures-as-data: per-subject accuracy tables, confusion matrices and the
//! statistics table, all built from FoldResult records.

use std::fmt::Write as _;

use refrakt_core::evalharness::FoldResult;
use refrakt_core::fusion::Modality;
use refrakt_core::stats::{compare_models, summarize, StatsEntry, CHANCE_PERCENT};
use refrakt_core::{DiopterClass, N_CLASSES};

use crate::CliError;

/// Results split by modality, in eog, gaze, multimodal order; absent
/// modalities are left out.
pub fn by_modality(results: &[FoldResult]) -> Vec<(Modality, Vec<&FoldResult>)> {
    Modality::ALL
        .into_iter()
        .map(|m| (m, results.iter().filter(|r| r.modality == m).collect::<Vec<_>>()))
        .filter(|(_, rs)| !rs.is_empty())
        .collect()
}

/// `(subject, mean accuracy, mean macro F1)` over folds, in first-appearance order.
pub fn per_subject(results: &[&FoldResult]) -> Vec<(String, f64, f64)> {
    let mut acc: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in results {
        match acc.iter_mut().find(|e| e.0 == r.subject_id) {
            Some(e) => {
                e.1 += r.accuracy;
                e.2 += r.macro_f1;
                e.3 += 1;
            }
            None => acc.push((r.subject_id.clone(), r.accuracy, r.macro_f1, 1)),
        }
    }
    acc.into_iter().map(|(s, a, f, n)| (s, a / n as f64, f / n as f64)).collect()
}

/// One row per subject, then `mean`, `sd` (sample) and `sem` rows.
pub fn accuracy_csv(results: &[&FoldResult]) -> String {
    let rows = per_subject(results);
    let mut out = String::from("subject,accuracy,macro_f1\n");
    for (s, a, f) in &rows {
        writeln!(out, "{s},{a},{f}").expect("write to String");
    }
    let acc = summarize(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let f1 = summarize(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    writeln!(out, "mean,{},{}", acc.mean, f1.mean).expect("write to String");
    writeln!(out, "sd,{},{}", acc.sd, f1.sd).expect("write to String");
    writeln!(out, "sem,{},{}", acc.sem, f1.sem).expect("write to String");
    out
}

/// Test windows summed over every fold, `[true][predicted]`.
pub fn total_confusion(results: &[&FoldResult]) -> Result<Vec<Vec<u64>>, CliError> {
    let mut total = vec![vec![0u64; N_CLASSES]; N_CLASSES];
    for r in results {
        if r.confusion.len() != N_CLASSES || r.confusion.iter().any(|row| row.len() != N_CLASSES) {
            return Err(CliError::Usage(format!("{} fold {}: confusion matrix is not 13 x 13", r.subject_id, r.fold_id)));
        }
        for (t, row) in r.confusion.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                total[t][p] += v;
            }
        }
    }
    Ok(total)
}

fn diopter_label(i: usize) -> String {
    format!("{:+.1}", DiopterClass::from_index(i).expect("class index").diopter())
}

/// Rows are true diopters, columns predicted. With `percent`, each row is
/// scaled to sum to 100 (rows without windows stay 0).
pub fn confusion_csv(confusion: &[Vec<u64>], percent: bool) -> String {
    let mut out = String::from("true\\predicted");
    for j in 0..N_CLASSES {
        write!(out, ",{}", diopter_label(j)).expect("write to String");
    }
    out.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        out.push_str(&diopter_label(i));
        let total: u64 = row.iter().sum();
        for &v in row {
            if percent {
                let pct = if total == 0 { 0.0 } else { 100.0 * v as f64 / total as f64 };
                write!(out, ",{pct}").expect("write to String");
            } else {
                write!(out, ",{v}").expect("write to String");
            }
        }
        out.push('\n');
    }
    out
}

/// The statistics table over per-subject mean accuracies. Every modality
/// must cover the same subjects.
pub fn stats_table(results: &[FoldResult], family: Option<usize>) -> Result<Vec<StatsEntry>, CliError> {
    let groups = by_modality(results);
    if groups.len() < 2 {
        return Err(CliError::Usage("statistics need results for at least two modalities".into()));
    }
    let mut subjects: Vec<String> = per_subject(&groups[0].1).into_iter().map(|r| r.0).collect();
    subjects.sort();
    let mut names = Vec::new();
    let mut scores = Vec::new();
    for (m, rs) in &groups {
        let mut rows = per_subject(rs);
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if rows.iter().map(|r| &r.0).ne(subjects.iter()) {
            return Err(CliError::Usage(format!("{m} results cover different subjects than {}", groups[0].0)));
        }
        names.push(m.name());
        scores.push(rows.into_iter().map(|r| r.1).collect::<Vec<_>>());
    }
    Ok(compare_models(&names, &scores, CHANCE_PERCENT, family)?)
}
