//! Token-level per-label precision/recall/F1 and span-level diagnostics.
//!
//! Per-label F1 is `TP / (TP + (FP + FN) / 2)`. A label that never occurs
//! in either gold or predictions gets F1 = 0 and is left out of the macro
//! averages. The weighted average weights each label by its gold support.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_spans, repair_bio, Label, LabeledSequence};
use crate::error::{Error, Result};
use crate::parallel::Execution;

const L: usize = Label::COUNT;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: [u64; L],
    pub fp: [u64; L],
    pub fn_: [u64; L],
}

impl Counts {
    pub fn observe(&mut self, gold: Label, pred: Label) {
        if gold == pred {
            self.tp[gold.index()] += 1;
        } else {
            self.fp[pred.index()] += 1;
            self.fn_[gold.index()] += 1;
        }
    }

    pub fn merge(mut self, other: Counts) -> Counts {
        for l in 0..L {
            self.tp[l] += other.tp[l];
            self.fp[l] += other.fp[l];
            self.fn_[l] += other.fn_[l];
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: Label,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl LabelStats {
    fn from_counts(label: Label, tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let f1_den = tp as f64 + 0.5 * (fp + fn_) as f64;
        LabelStats {
            label,
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: if f1_den == 0.0 { 0.0 } else { tp as f64 / f1_den },
            support: tp + fn_,
        }
    }

    /// True when the label occurs in gold or predictions.
    pub fn is_active(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub labels: Vec<LabelStats>,
    /// Mean F1 over active labels among B, I, O.
    pub macro_f1_all: f64,
    /// Mean F1 over active labels among B, I.
    pub macro_f1_bi: f64,
    pub weighted_f1: f64,
    pub tokens: u64,
}

impl LabelReport {
    pub fn from_counts(counts: &Counts) -> Self {
        let labels: Vec<LabelStats> = Label::ALL
            .iter()
            .map(|&l| LabelStats::from_counts(l, counts.tp[l.index()], counts.fp[l.index()], counts.fn_[l.index()]))
            .collect();
        let macro_over = |keep: &dyn Fn(&LabelStats) -> bool| {
            let active: Vec<f64> = labels.iter().filter(|s| s.is_active() && keep(s)).map(|s| s.f1).collect();
            if active.is_empty() {
                0.0
            } else {
                active.iter().sum::<f64>() / active.len() as f64
            }
        };
        let support: u64 = labels.iter().map(|s| s.support).sum();
        let weighted_f1 = if support == 0 {
            0.0
        } else {
            labels.iter().map(|s| s.support as f64 * s.f1).sum::<f64>() / support as f64
        };
        LabelReport {
            macro_f1_all: macro_over(&|_| true),
            macro_f1_bi: macro_over(&|s| s.label != Label::O),
            weighted_f1,
            tokens: support,
            labels,
        }
    }

    pub fn get(&self, label: Label) -> &LabelStats {
        &self.labels[label.index()]
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}",
            "label", "precision", "recall", "f1", "support", "tp", "fp", "fn"
        );
        for s in &self.labels {
            let _ = writeln!(
                out,
                "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>7} {:>7} {:>7}",
                s.label.as_str(),
                s.precision,
                s.recall,
                s.f1,
                s.support,
                s.tp,
                s.fp,
                s.fn_
            );
        }
        let _ = writeln!(out, "{:<16} {:>9.4}", "macro f1 (BIO)", self.macro_f1_all);
        let _ = writeln!(out, "{:<16} {:>9.4}", "macro f1 (BI)", self.macro_f1_bi);
        let _ = writeln!(out, "{:<16} {:>9.4}", "weighted f1", self.weighted_f1);
        out
    }
}

/// Pairs predictions with gold by sentence id.
fn align<'a>(
    gold: &'a [LabeledSequence],
    pred: &'a [LabeledSequence],
) -> Result<Vec<(&'a LabeledSequence, &'a LabeledSequence)>> {
    if gold.len() != pred.len() {
        return Err(Error::argument(format!(
            "{} gold sequences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut by_id: HashMap<&str, &LabeledSequence> = HashMap::with_capacity(pred.len());
    for p in pred {
        if by_id.insert(p.sentence_id.as_str(), p).is_some() {
            return Err(Error::argument(format!("duplicate predicted sentence {}", p.sentence_id)));
        }
    }
    let mut seen = HashSet::with_capacity(gold.len());
    gold.iter()
        .map(|g| {
            if !seen.insert(g.sentence_id.as_str()) {
                return Err(Error::argument(format!("duplicate gold sentence {}", g.sentence_id)));
            }
            let p = by_id
                .get(g.sentence_id.as_str())
                .ok_or_else(|| Error::argument(format!("no prediction for sentence {}", g.sentence_id)))?;
            if p.labels.len() != g.labels.len() {
                return Err(Error::argument(format!(
                    "sentence {}: {} gold labels but {} predicted",
                    g.sentence_id,
                    g.labels.len(),
                    p.labels.len()
                )));
            }
            Ok((g, *p))
        })
        .collect()
}

pub fn token_counts(gold: &[LabeledSequence], pred: &[LabeledSequence], exec: Execution) -> Result<Counts> {
    let pairs = align(gold, pred)?;
    Ok(exec.map_reduce(
        &pairs,
        |(g, p)| {
            let mut c = Counts::default();
            for (&gl, &pl) in g.labels.iter().zip(&p.labels) {
                c.observe(gl, pl);
            }
            c
        },
        Counts::default,
        Counts::merge,
    ))
}

pub fn token_prf(gold: &[LabeledSequence], pred: &[LabeledSequence]) -> Result<LabelReport> {
    Ok(LabelReport::from_counts(&token_counts(gold, pred, Execution::default())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact-match span scores after repairing predictions to well-formed BIO.
/// With no gold and no predicted spans the scores are all 1.
pub fn span_exact_match(gold: &[LabeledSequence], pred: &[LabeledSequence]) -> Result<SpanReport> {
    let pairs = align(gold, pred)?;
    let (mut tp, mut n_gold, mut n_pred) = (0u64, 0u64, 0u64);
    for (g, p) in pairs {
        let gs: HashSet<(usize, usize)> = extract_spans(&repair_bio(&g.labels)).into_iter().collect();
        let ps: HashSet<(usize, usize)> = extract_spans(&repair_bio(&p.labels)).into_iter().collect();
        tp += gs.intersection(&ps).count() as u64;
        n_gold += gs.len() as u64;
        n_pred += ps.len() as u64;
    }
    let (precision, recall, f1) = if n_gold == 0 && n_pred == 0 {
        (1.0, 1.0, 1.0)
    } else {
        let r = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        (r(tp, n_pred), r(tp, n_gold), r(2 * tp, n_pred + n_gold))
    };
    Ok(SpanReport {
        tp,
        fp: n_pred - tp,
        fn_: n_gold - tp,
        precision,
        recall,
        f1,
    })
}
