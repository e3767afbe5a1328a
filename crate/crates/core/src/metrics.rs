//! Confusion-matrix metrics, macro averaging and one-vs-rest ROC curves.
//!
//! Per class `i`, with `N` items:
//!
//! ```text
//! precision   = TP / (TP + FP)
//! recall      = TP / (TP + FN)
//! specificity = TN / (TN + FP)            TN = N - TP - FP - FN
//! F1          = 2 recall precision / (recall + precision)
//! accuracy    = TP / N                    ("literal", summed for overall accuracy)
//! accuracy    = (TP + TN) / N             ("standard")
//! balanced AUC = (recall + specificity) / 2
//! ```
//!
//! A zero denominator yields 0 and sets a flag on the class.

use std::fmt::Write as _;

use crate::catalog::{Label, Location};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{predicted} predictions for {truth} ground-truth labels")]
    Length { predicted: usize, truth: usize },
    #[error("no items to evaluate")]
    Empty,
    #[error("label {0} is not in the catalog")]
    UnknownLabel(Label),
}

/// Counts with rows = true label and columns = predicted label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<Label>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Builds a matrix from hand-entered counts.
    pub fn from_counts(labels: Vec<Label>, counts: Vec<Vec<u64>>) -> Option<Self> {
        let k = labels.len();
        (k > 0 && counts.len() == k && counts.iter().all(|r| r.len() == k)).then_some(Self { labels, counts })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn cell(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.counts[i][i]
    }

    pub fn fp(&self, i: usize) -> u64 {
        self.counts.iter().map(|r| r[i]).sum::<u64>() - self.tp(i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        self.counts[i].iter().sum::<u64>() - self.tp(i)
    }

    pub fn tn(&self, i: usize) -> u64 {
        self.total() - self.tp(i) - self.fp(i) - self.fn_(i)
    }

    /// Items whose true label is class `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }
}

/// Counts `(predicted, truth)` pairs over the columns `labels`.
pub fn confusion(predicted: &[Label], truth: &[Label], labels: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::Length {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let pos = |l: &Label| {
        labels
            .iter()
            .position(|x| x == l)
            .ok_or(MetricsError::UnknownLabel(*l))
    };
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (p, t) in predicted.iter().zip(truth) {
        counts[pos(t)?][pos(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    PrecisionUndefined,
    RecallUndefined,
    SpecificityUndefined,
    F1Undefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: Label,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub accuracy_literal: f64,
    pub accuracy_standard: f64,
    pub balanced_auc: f64,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    /// F1 of mean recall and mean precision.
    pub f1: f64,
    /// Balanced AUC of mean recall and mean specificity.
    pub auc: f64,
    /// Sum over classes of the literal accuracy, i.e. correct / total.
    pub overall_accuracy: f64,
    /// Labels that entered the class means.
    pub averaged: Vec<Label>,
    /// Fewer than two classes were averaged.
    pub degenerate: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub total: u64,
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: MacroMetrics,
}

fn ratio(num: f64, den: f64, flag: Flag, flags: &mut Vec<Flag>) -> f64 {
    if den == 0.0 {
        flags.push(flag);
        0.0
    } else {
        num / den
    }
}

fn f1_of(recall: f64, precision: f64) -> Option<f64> {
    let den = recall + precision;
    (den > 0.0).then(|| 2.0 * recall * precision / den)
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let n = cm.total() as f64;
    (0..cm.labels.len())
        .map(|i| {
            let (tp, fp, fn_, tn) = (cm.tp(i), cm.fp(i), cm.fn_(i), cm.tn(i));
            let (tpf, fpf, fnf, tnf) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
            let mut flags = Vec::new();
            let precision = ratio(tpf, tpf + fpf, Flag::PrecisionUndefined, &mut flags);
            let recall = ratio(tpf, tpf + fnf, Flag::RecallUndefined, &mut flags);
            let specificity = ratio(tnf, tnf + fpf, Flag::SpecificityUndefined, &mut flags);
            let f1 = f1_of(recall, precision).unwrap_or_else(|| {
                flags.push(Flag::F1Undefined);
                0.0
            });
            ClassMetrics {
                label: cm.labels[i],
                support: cm.support(i),
                tp,
                fp,
                fn_,
                tn,
                precision,
                recall,
                specificity,
                f1,
                accuracy_literal: tpf / n,
                accuracy_standard: (tpf + tnf) / n,
                balanced_auc: (recall + specificity) / 2.0,
                flags,
            }
        })
        .collect()
}

/// Macro aggregates over the classes present in the ground truth.
///
/// Predicted-only columns (typically `Other` when no item is truly unknown)
/// still count as false negatives of the true classes but do not enter the
/// means themselves.
pub fn macro_average(classes: &[ClassMetrics]) -> MacroMetrics {
    let present: Vec<&ClassMetrics> = classes.iter().filter(|c| c.support > 0).collect();
    let k = present.len().max(1) as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / k;
    let precision = mean(|c| c.precision);
    let recall = mean(|c| c.recall);
    let specificity = mean(|c| c.specificity);
    let f1 = f1_of(recall, precision);
    let mut overall_accuracy: f64 = classes.iter().map(|c| c.accuracy_literal).sum();
    // guard the summed ratios against 1 + ulp
    overall_accuracy = overall_accuracy.min(1.0);
    MacroMetrics {
        precision,
        recall,
        specificity,
        f1: f1.unwrap_or(0.0),
        // a lone class has no negatives; its specificity is flagged 0 and
        // its balanced AUC degenerates to recall / 2
        auc: (recall + specificity) / 2.0,
        overall_accuracy,
        averaged: present.iter().map(|c| c.label).collect(),
        degenerate: present.len() < 2,
        f1_undefined: f1.is_none(),
    }
}

pub fn evaluate(cm: &ConfusionMatrix) -> MetricsReport {
    let classes = per_class_metrics(cm);
    let macro_avg = macro_average(&classes);
    MetricsReport {
        total: cm.total(),
        classes,
        macro_avg,
    }
}

impl MetricsReport {
    /// `key=value` summary lines followed by a per-class table.
    pub fn to_text(&self) -> String {
        let m = &self.macro_avg;
        let mut s = String::new();
        let _ = writeln!(s, "items={}", self.total);
        let _ = writeln!(s, "classes_averaged={}", m.averaged.len());
        let _ = writeln!(s, "macro_precision={:.6}", m.precision);
        let _ = writeln!(s, "macro_recall={:.6}", m.recall);
        let _ = writeln!(s, "macro_specificity={:.6}", m.specificity);
        let _ = writeln!(s, "macro_f1={:.6}", m.f1);
        let _ = writeln!(s, "macro_auc={:.6}", m.auc);
        let _ = writeln!(s, "overall_accuracy={:.6}", m.overall_accuracy);
        let _ = writeln!(s, "degenerate={}", m.degenerate);
        let _ = writeln!(
            s,
            "#class,support,tp,fp,fn,tn,precision,recall,specificity,f1,accuracy,accuracy_standard,balanced_auc,flags"
        );
        for c in &self.classes {
            let flags: Vec<String> = c.flags.iter().map(|f| format!("{f:?}")).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                c.label.name(),
                c.support,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                c.precision,
                c.recall,
                c.specificity,
                c.f1,
                c.accuracy_literal,
                c.accuracy_standard,
                c.balanced_auc,
                flags.join("|")
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRoc {
    pub class: Location,
    pub points: Vec<RocPoint>,
    /// Trapezoidal area; `None` when the class has no positives or no negatives.
    pub area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub classes: Vec<ClassRoc>,
}

/// One-vs-rest ROC for a single class from scores (higher = more positive).
///
/// Thresholds sweep every distinct score from high to low; items scoring at
/// least the threshold are called positive. Tied scores enter together, so a
/// tie contributes a diagonal segment.
pub fn roc_binary(scores: &[f64], positive: &[bool]) -> (Vec<RocPoint>, Option<f64>) {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: if n > 0.0 { fp / n } else { 0.0 },
            tpr: if p > 0.0 { tp / p } else { 0.0 },
        });
    }
    let area = (p > 0.0 && n > 0.0).then(|| {
        points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    });
    (points, area)
}

/// Per-class ROC curves. `scores[item][k]` is the score of `classes[k]` for
/// the item, conventionally the negated median distance.
pub fn roc_curve(scores: &[Vec<f64>], truth: &[Label], classes: &[Location]) -> Result<RocCurve, MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::Length {
            predicted: scores.len(),
            truth: truth.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let classes = classes
        .iter()
        .enumerate()
        .map(|(k, &class)| {
            let s: Vec<f64> = scores.iter().map(|row| row[k]).collect();
            let pos: Vec<bool> = truth.iter().map(|t| *t == Label::Location(class)).collect();
            let (points, area) = roc_binary(&s, &pos);
            ClassRoc { class, points, area }
        })
        .collect();
    Ok(RocCurve { classes })
}

impl RocCurve {
    /// `class,threshold,fpr,tpr` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("#class,threshold,fpr,tpr\n");
        for c in &self.classes {
            for p in &c.points {
                let _ = writeln!(s, "{},{},{},{}", c.class.name(), p.threshold, p.fpr, p.tpr);
            }
        }
        s
    }

    /// `roc_auc_<class>=<area>` lines (`undefined` for one-sided classes).
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.classes {
            match c.area {
                Some(a) => {
                    let _ = writeln!(s, "roc_auc_{}={a:.6}", c.class.name());
                }
                None => {
                    let _ = writeln!(s, "roc_auc_{}=undefined", c.class.name());
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(i: u32) -> Label {
        Label::from_index(i).unwrap()
    }

    #[test]
    fn perfect_three_class() {
        let labels = vec![l(1), l(2), l(3)];
        let truth: Vec<Label> = (0..9).map(|i| labels[i % 3]).collect();
        let cm = confusion(&truth, &truth, &labels).unwrap();
        assert_eq!((cm.tp(0), cm.tp(1), cm.tp(2)), (3, 3, 3));
        let r = evaluate(&cm);
        assert_eq!((r.macro_avg.f1, r.macro_avg.auc, r.macro_avg.overall_accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn six_items_two_errors() {
        // truth: A A B B C C ; predicted: A B B B C A
        let labels = vec![l(1), l(2), l(3)];
        let truth = [l(1), l(1), l(2), l(2), l(3), l(3)];
        let pred = [l(1), l(2), l(2), l(2), l(3), l(1)];
        let cm = confusion(&pred, &truth, &labels).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
        assert_eq!((cm.tp(0), cm.fp(0), cm.fn_(0), cm.tn(0)), (1, 1, 1, 3));
    }

    #[test]
    fn input_errors() {
        let labels = vec![l(1)];
        assert_eq!(confusion(&[], &[], &labels), Err(MetricsError::Empty));
        assert!(matches!(confusion(&[l(1)], &[], &labels), Err(MetricsError::Length { .. })));
        assert_eq!(confusion(&[l(2)], &[l(1)], &labels), Err(MetricsError::UnknownLabel(l(2))));
    }

    #[test]
    fn two_class_hand_matrix() {
        let cm = ConfusionMatrix::from_counts(vec![l(1), l(2)], vec![vec![8, 2], vec![1, 9]]).unwrap();
        let c = &per_class_metrics(&cm)[0];
        assert!((c.precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((c.recall - 0.8).abs() < 1e-12);
        assert!((c.specificity - 0.9).abs() < 1e-12);
        assert!((c.f1 - 16.0 / 19.0).abs() < 1e-12);
        assert!((c.balanced_auc - 0.85).abs() < 1e-12);
        assert!((c.accuracy_literal - 0.4).abs() < 1e-12);
        assert!((c.accuracy_standard - 0.85).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        // class 2 is never predicted and never true
        let cm = ConfusionMatrix::from_counts(vec![l(1), l(2)], vec![vec![4, 0], vec![0, 0]]).unwrap();
        let m = per_class_metrics(&cm);
        assert!(m[1].flags.contains(&Flag::PrecisionUndefined));
        assert!(m[1].flags.contains(&Flag::RecallUndefined));
        assert!(m[0].flags.contains(&Flag::SpecificityUndefined));
        let mac = macro_average(&m);
        assert!(mac.degenerate);
        assert_eq!(mac.averaged, vec![l(1)]);
        assert_eq!(mac.f1, m[0].f1);
        assert_eq!(mac.overall_accuracy, 1.0);
    }

    #[test]
    fn roc_perfect_and_chance() {
        let (_, a) = roc_binary(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(a, Some(1.0));
        let (pts, a) = roc_binary(&[0.5; 6], &[true, false, true, false, false, true]);
        assert_eq!(a, Some(0.5));
        assert_eq!(pts.len(), 2);
        let (_, a) = roc_binary(&[0.1, 0.2], &[true, true]);
        assert_eq!(a, None);
    }

    #[test]
    fn roc_points_monotone() {
        let scores = [0.3, -0.2, 0.9, 0.1, 0.1, -0.7, 0.4];
        let pos = [true, false, true, false, true, false, false];
        let (pts, _) = roc_binary(&scores, &pos);
        assert!(pts.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        assert_eq!(pts.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }
}
