//! Evaluation, run-to-run stability and majority-class attractor diagnostics.
//!
//! Macro averages run over the classes that occur in the gold labels. A
//! class never predicted has precision 0; every zero denominator yields 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::Strength;
use crate::consistency::modal;
use crate::council::CouncilResult;
use crate::label::{DmrsLabel, NUM_LABELS};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("stability needs at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("run {run} has {got} predictions, expected {expected}")]
    RaggedRuns { run: usize, got: usize, expected: usize },
}

pub type Confusion = [[usize; NUM_LABELS]; NUM_LABELS];

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<DmrsLabel, ClassMetrics>,
    /// Rows are gold, columns predicted.
    pub confusion: Confusion,
}

pub fn confusion_matrix(preds: &[DmrsLabel], golds: &[DmrsLabel]) -> Result<Confusion, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut m = [[0usize; NUM_LABELS]; NUM_LABELS];
    for (p, g) in preds.iter().zip(golds) {
        m[g.index()][p.index()] += 1;
    }
    Ok(m)
}

pub fn evaluate(preds: &[DmrsLabel], golds: &[DmrsLabel]) -> Result<EvalReport, MetricsError> {
    Ok(EvalReport::from_confusion(confusion_matrix(preds, golds)?))
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let n: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..NUM_LABELS).map(|i| confusion[i][i]).sum();
        let mut per_class = BTreeMap::new();
        for c in DmrsLabel::all() {
            let i = c.index();
            let support: usize = confusion[i].iter().sum();
            if support == 0 {
                continue;
            }
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            let precision = ratio(confusion[i][i], predicted);
            let recall = ratio(confusion[i][i], support);
            per_class.insert(
                c,
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                },
            );
        }
        let k = per_class.len();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if k == 0 {
                0.0
            } else {
                per_class.values().map(f).sum::<f64>() / k as f64
            }
        };
        EvalReport {
            n,
            accuracy: ratio(correct, n),
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
        }
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            accuracy: self.accuracy,
            precision: self.macro_precision,
            recall: self.macro_recall,
            f1: self.macro_f1,
        }
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>6} {:>6} {:>6} {:>6}", "N", "Acc", "P", "R", "F1");
        let _ = writeln!(
            out,
            "{:>6} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            self.n, self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        out.push('\n');
        let _ = writeln!(out, "{:<6} {:>7} {:>6} {:>6} {:>6}", "Class", "Support", "P", "R", "F1");
        for (c, m) in &self.per_class {
            let _ = writeln!(
                out,
                "{:<6} {:>7} {:>6.3} {:>6.3} {:>6.3}",
                c.to_string(),
                m.support,
                m.precision,
                m.recall,
                m.f1
            );
        }
        out
    }
}

/// The four headline metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `variant - base` in percentage points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub accuracy_pp: f64,
    pub precision_pp: f64,
    pub recall_pp: f64,
    pub f1_pp: f64,
}

pub fn ablation_delta(base: &MetricSummary, variant: &MetricSummary) -> MetricDelta {
    MetricDelta {
        accuracy_pp: (variant.accuracy - base.accuracy) * 100.0,
        precision_pp: (variant.precision - base.precision) * 100.0,
        recall_pp: (variant.recall - base.recall) * 100.0,
        f1_pp: (variant.f1 - base.f1) * 100.0,
    }
}

/// Signed, one decimal: `+2.4pp`.
pub fn format_pp(pp: f64) -> String {
    let rounded = (pp * 10.0).round() / 10.0;
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:+.1}pp")
}

impl MetricDelta {
    pub fn render(&self) -> String {
        format!(
            "Acc {}  P {}  R {}  F1 {}",
            format_pp(self.accuracy_pp),
            format_pp(self.precision_pp),
            format_pp(self.recall_pp),
            format_pp(self.f1_pp)
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStability {
    pub n: usize,
    pub unstable: usize,
    pub disagreement_rate: f64,
    /// `None` when the class has no stable samples.
    pub stable_accuracy: Option<f64>,
    pub stable_wrong_rate: Option<f64>,
    /// Modal-prediction accuracy over unstable samples; modal ties count as wrong.
    pub unstable_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub n: usize,
    pub instability: f64,
    pub overall: ClassStability,
    pub per_class: BTreeMap<DmrsLabel, ClassStability>,
}

#[derive(Default)]
struct Tally {
    n: usize,
    stable: usize,
    stable_correct: usize,
    unstable: usize,
    unstable_correct: usize,
}

impl Tally {
    fn finish(&self) -> ClassStability {
        let opt = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let stable_accuracy = opt(self.stable_correct, self.stable);
        ClassStability {
            n: self.n,
            unstable: self.unstable,
            disagreement_rate: ratio(self.unstable, self.n),
            stable_accuracy,
            stable_wrong_rate: stable_accuracy.map(|a| 1.0 - a),
            unstable_accuracy: opt(self.unstable_correct, self.unstable),
        }
    }
}

/// Modal label when it is unique.
fn strict_modal(votes: &[DmrsLabel]) -> Option<DmrsLabel> {
    let (label, count) = modal(votes.iter().copied())?;
    let rivals = DmrsLabel::all()
        .filter(|&c| c != label && votes.iter().filter(|&&v| v == c).count() == count)
        .count();
    (rivals == 0).then_some(label)
}

pub fn stability(runs: &[Vec<DmrsLabel>], golds: &[DmrsLabel]) -> Result<StabilityReport, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    for (run, r) in runs.iter().enumerate() {
        if r.len() != golds.len() {
            return Err(MetricsError::RaggedRuns {
                run,
                got: r.len(),
                expected: golds.len(),
            });
        }
    }
    let mut overall = Tally::default();
    let mut per_class: BTreeMap<DmrsLabel, Tally> = BTreeMap::new();
    let mut votes = Vec::with_capacity(runs.len());
    for (i, &gold) in golds.iter().enumerate() {
        votes.clear();
        votes.extend(runs.iter().map(|r| r[i]));
        let is_stable = votes.iter().all(|&v| v == votes[0]);
        for t in [&mut overall, per_class.entry(gold).or_default()] {
            t.n += 1;
            if is_stable {
                t.stable += 1;
                t.stable_correct += usize::from(votes[0] == gold);
            } else {
                t.unstable += 1;
                t.unstable_correct += usize::from(strict_modal(&votes) == Some(gold));
            }
        }
    }
    let overall = overall.finish();
    Ok(StabilityReport {
        runs: runs.len(),
        n: golds.len(),
        instability: overall.disagreement_rate,
        overall,
        per_class: per_class.into_iter().map(|(c, t)| (c, t.finish())).collect(),
    })
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.1}%", v * 100.0))
}

impl StabilityReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>5} {:>9} {:>10} {:>11} {:>12}",
            "Class", "N", "Disagree", "Stable Acc", "Stable Wrong", "Unstable Acc"
        );
        let mut row = |name: String, s: &ClassStability| {
            let _ = writeln!(
                out,
                "{:<8} {:>5} {:>9} {:>10} {:>11} {:>12}",
                name,
                s.n,
                pct(Some(s.disagreement_rate)),
                pct(s.stable_accuracy),
                pct(s.stable_wrong_rate),
                pct(s.unstable_accuracy)
            );
        };
        for (c, s) in &self.per_class {
            row(c.to_string(), s);
        }
        row("Overall".into(), &self.overall);
        out
    }
}

/// One gold→predicted error cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub gold: DmrsLabel,
    pub predicted: DmrsLabel,
    pub count: usize,
    /// Share of all errors.
    pub share: f64,
}

/// Off-diagonal cells by descending count, then gold and predicted level.
pub fn error_confusions(confusion: &Confusion) -> (usize, Vec<ConfusionRow>) {
    let errors: usize = (0..NUM_LABELS)
        .flat_map(|g| (0..NUM_LABELS).filter(move |&p| p != g).map(move |p| (g, p)))
        .map(|(g, p)| confusion[g][p])
        .sum();
    let mut rows: Vec<ConfusionRow> = Vec::new();
    for g in DmrsLabel::all() {
        for p in DmrsLabel::all() {
            let count = confusion[g.index()][p.index()];
            if g != p && count > 0 {
                rows.push(ConfusionRow {
                    gold: g,
                    predicted: p,
                    count,
                    share: ratio(count, errors),
                });
            }
        }
    }
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.gold.cmp(&b.gold)).then(a.predicted.cmp(&b.predicted)));
    (errors, rows)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrongRate {
    pub strong: usize,
    pub rated: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    /// STRONG frequency per advocate class.
    pub strong_rate: BTreeMap<DmrsLabel, StrongRate>,
    pub errors: usize,
    /// Errors whose prediction is the majority class.
    pub majority_errors: usize,
    pub majority_error_share: f64,
    pub confusions: Vec<ConfusionRow>,
    /// Traces with no advocate ratings.
    pub skipped: usize,
}

pub fn attractor_report(traces: &[CouncilResult], golds: &[DmrsLabel]) -> Result<AttractorReport, MetricsError> {
    if traces.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: traces.len(),
            golds: golds.len(),
        });
    }
    let mut tallies = [(0usize, 0usize); NUM_LABELS];
    let mut skipped = 0;
    for t in traces {
        if t.ratings.is_empty() {
            skipped += 1;
            continue;
        }
        for (c, r) in &t.ratings {
            tallies[c.index()].1 += 1;
            tallies[c.index()].0 += usize::from(r.strength == Strength::Strong);
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} traces carry no advocate ratings and were skipped for STRONG rates");
    }
    let preds: Vec<DmrsLabel> = traces.iter().map(|t| t.label).collect();
    let confusion = confusion_matrix(&preds, golds)?;
    Ok(attractor_from_parts(&tallies, &confusion, skipped))
}

pub(crate) fn attractor_from_parts(tallies: &[(usize, usize); NUM_LABELS], confusion: &Confusion, skipped: usize) -> AttractorReport {
    let (errors, confusions) = error_confusions(confusion);
    let m = DmrsLabel::MAJORITY.index();
    let majority_errors = (0..NUM_LABELS).filter(|&g| g != m).map(|g| confusion[g][m]).sum();
    AttractorReport {
        strong_rate: DmrsLabel::all()
            .filter(|c| tallies[c.index()].1 > 0)
            .map(|c| {
                let (strong, rated) = tallies[c.index()];
                (
                    c,
                    StrongRate {
                        strong,
                        rated,
                        rate: ratio(strong, rated),
                    },
                )
            })
            .collect(),
        errors,
        majority_errors,
        majority_error_share: ratio(majority_errors, errors),
        confusions,
        skipped,
    }
}

/// Error table with an `Any → L7` row followed by the top `top` cells.
pub fn render_error_table(errors: usize, rows: &[ConfusionRow], majority_errors: usize, top: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>6} {:>7}", "Confusion", "Count", "%");
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>7.1}",
        format!("Any → {}", DmrsLabel::MAJORITY),
        majority_errors,
        ratio(majority_errors, errors) * 100.0
    );
    for r in rows.iter().take(top) {
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>7.1}",
            format!("{} → {}", r.gold, r.predicted),
            r.count,
            r.share * 100.0
        );
    }
    let _ = writeln!(out, "{:<12} {:>6}", "Errors", errors);
    out
}

impl AttractorReport {
    pub fn render_table(&self, top: usize) -> String {
        let mut out = render_error_table(self.errors, &self.confusions, self.majority_errors, top);
        out.push('\n');
        let _ = writeln!(out, "{:<9} {:>6} {:>6} {:>7}", "Advocate", "Strong", "Rated", "Rate");
        for (c, s) in &self.strong_rate {
            let _ = writeln!(out, "{:<9} {:>6} {:>6} {:>6.1}%", c.to_string(), s.strong, s.rated, s.rate * 100.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(v: &[u8]) -> Vec<DmrsLabel> {
        v.iter().map(|&x| DmrsLabel::of(x)).collect()
    }

    #[test]
    fn perfect_predictions() {
        let g = ls(&[0, 1, 7, 7, 8]);
        let r = evaluate(&g, &g).unwrap();
        assert_eq!((r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn small_hand_example() {
        let r = evaluate(&ls(&[7, 6, 6]), &ls(&[7, 7, 6])).unwrap();
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class.len(), 2);
        assert!(evaluate(&ls(&[7]), &ls(&[7, 6])).is_err());
    }

    #[test]
    fn stability_basics() {
        let g = ls(&[6, 7, 3]);
        let same = vec![ls(&[6, 7, 2]); 3];
        let s = stability(&same, &g).unwrap();
        assert_eq!(s.instability, 0.0);
        assert!((s.overall.stable_accuracy.unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let s = stability(&[ls(&[7]), ls(&[7]), ls(&[6])], &ls(&[6])).unwrap();
        assert_eq!(s.instability, 1.0);
        assert_eq!(s.overall.unstable_accuracy, Some(0.0));
        let tie = stability(&[ls(&[7]), ls(&[6])], &ls(&[6])).unwrap();
        assert_eq!(tie.overall.unstable_accuracy, Some(0.0));
        assert!(stability(&[ls(&[7])], &ls(&[7])).is_err());
    }

    #[test]
    fn table_two_style_rows() {
        let mut m = [[0usize; NUM_LABELS]; NUM_LABELS];
        m[6][7] = 66;
        m[0][7] = 37;
        m[1][0] = 289;
        let (errors, rows) = error_confusions(&m);
        assert_eq!(errors, 392);
        let six = rows.iter().find(|r| r.gold == DmrsLabel::of(6)).unwrap();
        assert_eq!(format!("{:.1}", six.share * 100.0), "16.8");
        let table = render_error_table(errors, &rows, 103, 5);
        assert!(table.contains("L6 → L7"));
    }

    #[test]
    fn all_correct_has_no_error_rows() {
        let mut m = [[0usize; NUM_LABELS]; NUM_LABELS];
        m[7][7] = 10;
        let (errors, rows) = error_confusions(&m);
        assert_eq!(errors, 0);
        assert!(rows.is_empty());
    }

    #[test]
    fn deltas() {
        let s = |f1| MetricSummary {
            accuracy: 0.5,
            precision: 0.5,
            recall: 0.5,
            f1,
        };
        assert_eq!(format_pp(ablation_delta(&s(0.382), &s(0.406)).f1_pp), "+2.4pp");
        assert_eq!(format_pp(ablation_delta(&s(0.268), &s(0.382)).f1_pp), "+11.4pp");
        assert_eq!(format_pp(ablation_delta(&s(0.4), &s(0.4)).f1_pp), "+0.0pp");
        assert_eq!(format_pp(-1.26), "-1.3pp");
    }
}
