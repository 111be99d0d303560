//! Accuracy and macro-F1 with match-any-gold scoring.
//!
//! A prediction is correct when it equals any gold label of the relation
//! (after projecting gold senses to the scored level). Per-class counts use a
//! fixed credit rule: a correct prediction is a true positive for the matched
//! class; a wrong one is a false negative for the first gold class and a
//! false positive for the predicted class. Macro-F1 averages over the whole
//! classification allow-list, so classes never seen contribute 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::RelationExample;
use crate::error::{Error, Result};
use crate::hierarchy::{Level, SenseHierarchy, SenseLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// In allow-list order.
    pub classes: Vec<ClassScore>,
    /// Relations scored.
    pub scored: usize,
    /// Relations with no gold label inside the allow-list.
    pub skipped: usize,
}

impl EvalReport {
    pub fn per_class_f1(&self, label: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.label == label).map(|c| c.f1)
    }

    pub fn support(&self, label: &str) -> Option<usize> {
        self.classes
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.support)
    }

    /// Mean F1 over classes with non-zero support.
    pub fn macro_f1_supported(&self) -> f64 {
        let supported: Vec<f64> = self
            .classes
            .iter()
            .filter(|c| c.support > 0)
            .map(|c| c.f1)
            .collect();
        if supported.is_empty() {
            0.0
        } else {
            supported.iter().sum::<f64>() / supported.len() as f64
        }
    }
}

/// Gold senses per rel_id, merging entries that share an id.
pub fn gold_sets(examples: &[RelationExample]) -> BTreeMap<String, Vec<SenseLabel>> {
    let mut out: BTreeMap<String, Vec<SenseLabel>> = BTreeMap::new();
    for e in examples {
        let entry = out.entry(e.rel_id.clone()).or_default();
        for s in &e.senses {
            if !entry.contains(s) {
                entry.push(s.clone());
            }
        }
    }
    out
}

pub fn score(
    preds: &BTreeMap<String, String>,
    gold: &BTreeMap<String, Vec<SenseLabel>>,
    level: Level,
    h: &SenseHierarchy,
) -> Result<EvalReport> {
    let projected: BTreeMap<String, Vec<String>> = gold
        .iter()
        .map(|(id, senses)| {
            let mut labels: Vec<String> = Vec::with_capacity(senses.len());
            for s in senses {
                let l = s.at_level(level);
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
            (id.clone(), labels)
        })
        .collect();
    score_labels(preds, &projected, h.classes(level), level)
}

/// Scoring over already-projected gold label lists and an explicit class list.
pub fn score_labels(
    preds: &BTreeMap<String, String>,
    gold: &BTreeMap<String, Vec<String>>,
    classes: &[String],
    level: Level,
) -> Result<EvalReport> {
    let missing: Vec<String> = gold
        .keys()
        .filter(|id| !preds.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let k = classes.len();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    let (mut correct, mut scored, mut skipped) = (0usize, 0usize, 0usize);

    for (id, labels) in gold {
        let in_list: Vec<usize> = labels
            .iter()
            .filter_map(|l| index.get(l.as_str()).copied())
            .collect();
        if in_list.is_empty() {
            skipped += 1;
            continue;
        }
        scored += 1;
        let pred = index.get(preds[id].as_str()).copied();
        match pred {
            Some(p) if in_list.contains(&p) => {
                correct += 1;
                tp[p] += 1;
            }
            _ => {
                fn_[in_list[0]] += 1;
                if let Some(p) = pred {
                    fp[p] += 1;
                }
            }
        }
    }

    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let class_scores: Vec<ClassScore> = (0..k)
        .map(|c| ClassScore {
            label: classes[c].clone(),
            tp: tp[c],
            fp: fp[c],
            fn_: fn_[c],
            precision: ratio(tp[c], tp[c] + fp[c]),
            recall: ratio(tp[c], tp[c] + fn_[c]),
            f1: ratio(2 * tp[c], 2 * tp[c] + fp[c] + fn_[c]),
            support: tp[c] + fn_[c],
        })
        .collect();
    let macro_f1 = if k == 0 {
        0.0
    } else {
        class_scores.iter().map(|c| c.f1).sum::<f64>() / k as f64
    };
    Ok(EvalReport {
        level,
        accuracy: ratio(correct, scored),
        macro_f1,
        classes: class_scores,
        scored,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub group: String,
    pub label: String,
    pub f1: f64,
    pub support: usize,
}

/// One row per class, grouped under its level-1 parent.
pub fn per_class_rows(report: &EvalReport) -> Vec<TableRow> {
    let mut groups: Vec<String> = Vec::new();
    for c in &report.classes {
        let g = parent_of(&c.label);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    groups
        .iter()
        .flat_map(|g| {
            report
                .classes
                .iter()
                .filter(move |c| &parent_of(&c.label) == g)
                .map(move |c| TableRow {
                    group: g.clone(),
                    label: c.label.clone(),
                    f1: c.f1,
                    support: c.support,
                })
        })
        .collect()
}

fn parent_of(label: &str) -> String {
    label.split('.').next().unwrap_or(label).to_string()
}

/// Human-readable per-class F1 table (percentages, two decimals).
pub fn per_class_table(report: &EvalReport) -> String {
    let rows = per_class_rows(report);
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let title = match report.level {
        Level::L1 => "Level-1 label",
        Level::L2 => "Level-2 label",
    };
    let _ = writeln!(out, "{title:<width$}  {:>6}  {:>7}", "F1", "Support");
    let mut current = None;
    for r in &rows {
        if report.level == Level::L2 && current.as_ref() != Some(&r.group) {
            let _ = writeln!(out, "{}", "-".repeat(width + 17));
            current = Some(r.group.clone());
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.2}  {:>7}",
            r.label,
            r.f1 * 100.0,
            r.support
        );
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 17));
    let _ = writeln!(
        out,
        "accuracy {:.2}  macro-F1 {:.2}  (scored {}, skipped {})",
        report.accuracy * 100.0,
        report.macro_f1 * 100.0,
        report.scored,
        report.skipped
    );
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub rel_id: String,
    pub level: Level,
    pub label: String,
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<predictions>", e))?;
    }
    out.flush().map_err(|e| Error::io("<predictions>", e))
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<predictions>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Predictions for one level as a rel_id map.
pub fn predictions_at(records: &[PredictionRecord], level: Level) -> BTreeMap<String, String> {
    records
        .iter()
        .filter(|r| r.level == level)
        .map(|r| (r.rel_id.clone(), r.label.clone()))
        .collect()
}
