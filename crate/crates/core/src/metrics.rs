//! Precision / recall / F1 for sentence classification and span extraction.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, SentenceInstance};
use crate::error::{Error, Result};
use crate::iobes::{spans_from_tags, Span, SpanKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Prf {
    /// Rates from counts; every `0/0` is taken as 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

/// Sentence-level decision plus component spans, for either gold or system output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub is_simile: bool,
    pub spans: Vec<Span>,
}

impl From<&SentenceInstance> for Annotation {
    fn from(s: &SentenceInstance) -> Self {
        Self {
            is_simile: s.is_simile,
            spans: spans_from_tags(&s.tags),
        }
    }
}

impl From<&Sentence> for Annotation {
    fn from(s: &Sentence) -> Self {
        Self {
            is_simile: s.is_simile,
            spans: s.spans(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classification: Prf,
    /// Micro-averaged over all spans.
    pub extraction: Prf,
    pub tenor: Prf,
    pub vehicle: Prf,
    /// No gold spans and no predicted spans at all.
    pub degenerate: bool,
}

pub fn compute_metrics(gold: &[Annotation], predicted: &[Annotation]) -> Result<MetricsReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Invalid(format!(
            "{} gold annotations but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let (mut ctp, mut cfp, mut cfn) = (0, 0, 0);
    // (tp, fp, fn) for tenor and vehicle
    let mut counts = [[0usize; 3]; 2];
    for (g, p) in gold.iter().zip(predicted) {
        match (g.is_simile, p.is_simile) {
            (true, true) => ctp += 1,
            (false, true) => cfp += 1,
            (true, false) => cfn += 1,
            (false, false) => {}
        }
        let gs: HashSet<&Span> = g.spans.iter().collect();
        let ps: HashSet<&Span> = p.spans.iter().collect();
        for s in &ps {
            let k = (s.kind == SpanKind::Vehicle) as usize;
            if gs.contains(s) {
                counts[k][0] += 1;
            } else {
                counts[k][1] += 1;
            }
        }
        for s in gs.difference(&ps) {
            counts[(s.kind == SpanKind::Vehicle) as usize][2] += 1;
        }
    }
    let tenor = Prf::from_counts(counts[0][0], counts[0][1], counts[0][2]);
    let vehicle = Prf::from_counts(counts[1][0], counts[1][1], counts[1][2]);
    let extraction = Prf::from_counts(
        tenor.tp + vehicle.tp,
        tenor.fp + vehicle.fp,
        tenor.fn_ + vehicle.fn_,
    );
    let degenerate = extraction.tp + extraction.fp + extraction.fn_ == 0;
    Ok(MetricsReport {
        classification: Prf::from_counts(ctp, cfp, cfn),
        extraction,
        tenor,
        vehicle,
        degenerate,
    })
}

/// Metrics per bucket, where `keys[i]` is the bucket of instance `i`.
pub fn bucketed_metrics(
    gold: &[Annotation],
    predicted: &[Annotation],
    keys: &[usize],
) -> Result<BTreeMap<usize, MetricsReport>> {
    if keys.len() != gold.len() {
        return Err(Error::Invalid(
            "bucket keys must align with annotations".into(),
        ));
    }
    let mut groups: BTreeMap<usize, (Vec<Annotation>, Vec<Annotation>)> = BTreeMap::new();
    for ((g, p), &k) in gold.iter().zip(predicted).zip(keys) {
        let e = groups.entry(k).or_default();
        e.0.push(g.clone());
        e.1.push(p.clone());
    }
    groups
        .into_iter()
        .map(|(k, (g, p))| compute_metrics(&g, &p).map(|m| (k, m)))
        .collect()
}

impl MetricsReport {
    /// Aligned plain-text table, rates in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "task", "precision", "recall", "f1", "tp", "fp", "fn"
        );
        for (name, m) in [
            ("classification", &self.classification),
            ("extraction", &self.extraction),
            ("  tenor", &self.tenor),
            ("  vehicle", &self.vehicle),
        ] {
            let _ = writeln!(
                out,
                "{:<16} {:>9.2} {:>9.2} {:>9.2} {:>6} {:>6} {:>6}",
                name,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                m.tp,
                m.fp,
                m.fn_
            );
        }
        if self.degenerate {
            let _ = writeln!(
                out,
                "(no gold or predicted spans; extraction scores are 0 by convention)"
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(start: usize, end: usize, kind: SpanKind) -> Span {
        Span { start, end, kind }
    }

    #[test]
    fn span_count_arithmetic() {
        let gold = vec![Annotation {
            is_simile: true,
            spans: vec![span(1, 2, SpanKind::Tenor)],
        }];
        let pred = vec![Annotation {
            is_simile: true,
            spans: vec![span(1, 2, SpanKind::Tenor), span(4, 4, SpanKind::Vehicle)],
        }];
        let m = compute_metrics(&gold, &pred).unwrap();
        assert_eq!(m.extraction.precision, 0.5);
        assert_eq!(m.extraction.recall, 1.0);
        assert!((m.extraction.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_degenerate_zero() {
        let a = vec![Annotation {
            is_simile: false,
            spans: vec![],
        }];
        let m = compute_metrics(&a, &a).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.extraction.f1, 0.0);
        assert_eq!(m.classification.f1, 0.0);
    }

    #[test]
    fn classification_formula() {
        let m = Prf::from_counts(80, 20, 10);
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert!((m.recall - 80.0 / 90.0).abs() < 1e-12);
        assert!((m.f1 - 0.842105263).abs() < 1e-6);
    }

    #[test]
    fn perfect_predictions_score_100() {
        let a = vec![
            Annotation {
                is_simile: true,
                spans: vec![span(0, 0, SpanKind::Tenor), span(2, 3, SpanKind::Vehicle)],
            },
            Annotation {
                is_simile: false,
                spans: vec![],
            },
        ];
        let m = compute_metrics(&a, &a).unwrap();
        assert_eq!(100.0 * m.classification.f1, 100.0);
        assert_eq!(100.0 * m.extraction.f1, 100.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = vec![Annotation {
            is_simile: true,
            spans: vec![],
        }];
        assert!(compute_metrics(&a, &[]).is_err());
    }
}
