//! Precision, recall and F1 against a reference alignment, micro/macro
//! aggregation over test cases, and McNemar's test for comparing two
//! alignments.

use std::fmt::Write as _;

use serde::Serialize;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::alignment::Alignment;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no test cases to aggregate")]
    NoCases,
    #[error("alpha must be in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    /// Zero denominators yield zero.
    pub fn from_counts(true_positives: usize, system: usize, reference: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(true_positives, system);
        let recall = ratio(true_positives, reference);
        Scores {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseReport {
    pub name: String,
    #[serde(flatten)]
    pub scores: Scores,
    pub system: usize,
    pub reference: usize,
    pub true_positives: usize,
}

impl CaseReport {
    pub fn from_counts(name: impl Into<String>, true_positives: usize, system: usize, reference: usize) -> Self {
        CaseReport {
            name: name.into(),
            scores: Scores::from_counts(true_positives, system, reference),
            system,
            reference,
            true_positives,
        }
    }
}

/// Compares by `(source, target)`; confidences are ignored.
pub fn evaluate(name: impl Into<String>, system: &Alignment, reference: &Alignment) -> CaseReport {
    CaseReport::from_counts(name, system.intersection_count(reference), system.len(), reference.len())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub per_test_case: Vec<CaseReport>,
    #[serde(rename = "macro")]
    pub macro_avg: Scores,
    #[serde(rename = "micro")]
    pub micro_avg: Scores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<McNemarResult>,
}

/// Macro: unweighted means of per-case scores. Micro: scores from pooled
/// counts.
pub fn macro_micro(cases: Vec<CaseReport>) -> Result<EvalReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let n = cases.len() as f64;
    let mean = |f: fn(&Scores) -> f64| cases.iter().map(|c| f(&c.scores)).sum::<f64>() / n;
    let macro_avg = Scores {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    };
    let (tp, sys, rf) = cases.iter().fold((0, 0, 0), |(tp, s, r), c| {
        (tp + c.true_positives, s + c.system, r + c.reference)
    });
    Ok(EvalReport {
        micro_avg: Scores::from_counts(tp, sys, rf),
        macro_avg,
        per_test_case: cases,
        comparison: None,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}",
            "test case", "precision", "recall", "f1", "system", "ref", "tp"
        );
        for c in &self.per_test_case {
            let _ = writeln!(
                out,
                "{:<24} {:>9.3} {:>9.3} {:>9.3} {:>8} {:>8} {:>8}",
                c.name, c.scores.precision, c.scores.recall, c.scores.f1, c.system, c.reference, c.true_positives
            );
        }
        if self.per_test_case.len() > 1 {
            for (name, s) in [("macro", &self.macro_avg), ("micro", &self.micro_avg)] {
                let _ = writeln!(out, "{:<24} {:>9.3} {:>9.3} {:>9.3}", name, s.precision, s.recall, s.f1);
            }
        }
        if let Some(m) = &self.comparison {
            let _ = writeln!(
                out,
                "McNemar: b={} c={} statistic={:.4} p={:.6} {} at alpha={}",
                m.b,
                m.c,
                m.statistic,
                m.p_value,
                if m.significant { "significant" } else { "not significant" },
                m.alpha
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct McNemarResult {
    /// Decisions where A is correct and B is not.
    pub b: usize,
    /// Decisions where B is correct and A is not.
    pub c: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    pub alpha: f64,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi_square_1_upper_tail(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

pub fn mcnemar_from_counts(b: usize, c: usize, alpha: f64) -> Result<McNemarResult, EvalError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvalError::InvalidAlpha(alpha));
    }
    let (statistic, p_value) = if b + c == 0 {
        (0.0, 1.0)
    } else {
        let diff = (b as f64 - c as f64).abs() - 1.0;
        let diff = diff.max(0.0);
        let statistic = diff * diff / (b + c) as f64;
        (statistic, chi_square_1_upper_tail(statistic))
    };
    Ok(McNemarResult {
        b,
        c,
        statistic,
        p_value,
        significant: p_value < alpha,
        alpha,
    })
}

/// Disagreement counts over the decision universe `a ∪ b ∪ reference`: a
/// matcher is correct on a correspondence when it contains it exactly when
/// the reference does.
pub fn mcnemar_counts(a: &Alignment, b: &Alignment, reference: &Alignment) -> (usize, usize) {
    let mut only_a = 0;
    let mut only_b = 0;
    let universe = a.keys().chain(b.keys()).chain(reference.keys());
    let mut seen = std::collections::HashSet::new();
    for key in universe {
        if !seen.insert(key) {
            continue;
        }
        let in_ref = reference.contains(&key.0, &key.1);
        let a_ok = a.contains(&key.0, &key.1) == in_ref;
        let b_ok = b.contains(&key.0, &key.1) == in_ref;
        match (a_ok, b_ok) {
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            _ => {}
        }
    }
    (only_a, only_b)
}

pub fn mcnemar_test(a: &Alignment, b: &Alignment, reference: &Alignment, alpha: f64) -> Result<McNemarResult, EvalError> {
    let (bc, cc) = mcnemar_counts(a, b, reference);
    mcnemar_from_counts(bc, cc, alpha)
}
