//! Binary accuracy suite (plastic is the positive class) and per-site
//! classification-report averaging.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::scalar::Scalar;
use crate::special::chi2_sf;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ ({predictions} vs {truths})")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no observations")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("class reports cover different class sets")]
    ClassSetMismatch,
}

/// Why a ratio has no value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    NoPositivePredictions,
    NoNegativePredictions,
    NoPositiveTruths,
    NoNegativeTruths,
    ZeroPrecisionAndRecall,
    /// Expected agreement is 1, kappa's denominator vanishes.
    CompleteChanceAgreement,
    /// One of the inputs of a derived or averaged metric was undefined.
    UndefinedInput,
}

/// A ratio that may be undefined because of a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue<T> {
    Value(T),
    NotAValue(Undefined),
}

impl<T: Scalar> MetricValue<T> {
    fn ratio(num: u64, den: u64, reason: Undefined) -> Self {
        if den == 0 {
            MetricValue::NotAValue(reason)
        } else {
            MetricValue::Value(T::lit(num as f64 / den as f64))
        }
    }

    pub fn value(self) -> Option<T> {
        match self {
            MetricValue::Value(v) => Some(v),
            MetricValue::NotAValue(_) => None,
        }
    }

    pub fn is_na(self) -> bool {
        matches!(self, MetricValue::NotAValue(_))
    }

    fn zip_with(self, other: Self, f: impl FnOnce(T, T) -> T) -> Self {
        match (self, other) {
            (MetricValue::Value(a), MetricValue::Value(b)) => MetricValue::Value(f(a, b)),
            _ => MetricValue::NotAValue(Undefined::UndefinedInput),
        }
    }
}

impl<T: Scalar> fmt::Display for MetricValue<T> {
    /// Shortest round-trip decimal, or `NA`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v}"),
            MetricValue::NotAValue(_) => f.write_str("NA"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_neg: u64,
    pub false_pos: u64,
    pub true_neg: u64,
}

impl ConfusionMatrix {
    /// Argument order follows the usual `(tp, fn, fp, tn)` reading.
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self {
            true_pos: tp,
            false_neg: fn_,
            false_pos: fp,
            true_neg: tn,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_neg + self.false_pos + self.true_neg
    }

    /// Same matrix with water taken as the positive class.
    pub fn swapped(&self) -> Self {
        Self::new(self.true_neg, self.false_pos, self.false_neg, self.true_pos)
    }

    pub fn record(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Plastic, Label::Plastic) => self.true_pos += 1,
            (Label::Water, Label::Plastic) => self.false_neg += 1,
            (Label::Plastic, Label::Water) => self.false_pos += 1,
            (Label::Water, Label::Water) => self.true_neg += 1,
        }
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truths) {
        cm.record(*p, *t);
    }
    Ok(cm)
}

/// Names of the nine reported metrics, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    Kappa,
    McnemarP,
    Sensitivity,
    Specificity,
    Precision,
    Recall,
    F1,
    BalancedAccuracy,
}

impl MetricName {
    pub const ALL: [MetricName; 9] = [
        MetricName::Accuracy,
        MetricName::Kappa,
        MetricName::McnemarP,
        MetricName::Sensitivity,
        MetricName::Specificity,
        MetricName::Precision,
        MetricName::Recall,
        MetricName::F1,
        MetricName::BalancedAccuracy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::Kappa => "kappa",
            MetricName::McnemarP => "mcnemar_p",
            MetricName::Sensitivity => "sensitivity",
            MetricName::Specificity => "specificity",
            MetricName::Precision => "precision",
            MetricName::Recall => "recall",
            MetricName::F1 => "f1",
            MetricName::BalancedAccuracy => "balanced_accuracy",
        }
    }

    /// Row label in the text table.
    pub fn title(self) -> &'static str {
        match self {
            MetricName::Accuracy => "Accuracy",
            MetricName::Kappa => "Kappa",
            MetricName::McnemarP => "Mcnemar P Value",
            MetricName::Sensitivity => "Sensitivity",
            MetricName::Specificity => "Specificity",
            MetricName::Precision => "Precision",
            MetricName::Recall => "Recall",
            MetricName::F1 => "F1",
            MetricName::BalancedAccuracy => "Balanced Accuracy",
        }
    }
}

impl std::str::FromStr for MetricName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub accuracy: T,
    pub kappa: MetricValue<T>,
    pub mcnemar_p: T,
    pub sensitivity: MetricValue<T>,
    pub specificity: MetricValue<T>,
    pub precision: MetricValue<T>,
    pub recall: MetricValue<T>,
    pub f1: MetricValue<T>,
    pub balanced_accuracy: MetricValue<T>,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn get(&self, name: MetricName) -> MetricValue<T> {
        match name {
            MetricName::Accuracy => MetricValue::Value(self.accuracy),
            MetricName::Kappa => self.kappa,
            MetricName::McnemarP => MetricValue::Value(self.mcnemar_p),
            MetricName::Sensitivity => self.sensitivity,
            MetricName::Specificity => self.specificity,
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
            MetricName::BalancedAccuracy => self.balanced_accuracy,
        }
    }

    pub fn entries(&self) -> [(MetricName, MetricValue<T>); 9] {
        MetricName::ALL.map(|m| (m, self.get(m)))
    }
}

/// Continuity-corrected McNemar test on the discordant cells
/// `b = false_pos`, `c = false_neg`. Returns 1 when there are none.
pub fn mcnemar_p(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let (b, c) = (cm.false_pos as f64, cm.false_neg as f64);
    if b + c == 0.0 {
        return Ok(1.0);
    }
    let stat = ((b - c).abs() - 1.0).powi(2) / (b + c);
    Ok(chi2_sf(stat, 1.0))
}

fn f1_of<T: Scalar>(precision: MetricValue<T>, recall: MetricValue<T>) -> MetricValue<T> {
    match (precision, recall) {
        (MetricValue::Value(p), MetricValue::Value(r)) => {
            if p + r == T::zero() {
                MetricValue::NotAValue(Undefined::ZeroPrecisionAndRecall)
            } else {
                MetricValue::Value(T::lit(2.0) * p * r / (p + r))
            }
        }
        _ => MetricValue::NotAValue(Undefined::UndefinedInput),
    }
}

pub fn evaluate<T: Scalar>(cm: &ConfusionMatrix) -> Result<MetricsReport<T>, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let ConfusionMatrix {
        true_pos: tp,
        false_neg: fn_,
        false_pos: fp,
        true_neg: tn,
    } = *cm;
    let n = total as f64;
    let accuracy = (tp + tn) as f64 / n;
    let sensitivity = MetricValue::ratio(tp, tp + fn_, Undefined::NoPositiveTruths);
    let specificity = MetricValue::ratio(tn, tn + fp, Undefined::NoNegativeTruths);
    let precision = MetricValue::ratio(tp, tp + fp, Undefined::NoPositivePredictions);
    let recall = sensitivity;
    let f1 = f1_of(precision, recall);
    let balanced_accuracy = sensitivity.zip_with(specificity, |s, p| (s + p) / T::lit(2.0));

    let expected = ((tp + fn_) as f64 * (tp + fp) as f64 + (fp + tn) as f64 * (fn_ + tn) as f64) / (n * n);
    let kappa = if expected >= 1.0 {
        MetricValue::NotAValue(Undefined::CompleteChanceAgreement)
    } else {
        MetricValue::Value(T::lit((accuracy - expected) / (1.0 - expected)))
    };

    Ok(MetricsReport {
        accuracy: T::lit(accuracy),
        kappa,
        mcnemar_p: T::lit(mcnemar_p(cm)?),
        sensitivity,
        specificity,
        precision,
        recall,
        f1,
        balanced_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<T> {
    pub precision: MetricValue<T>,
    pub recall: MetricValue<T>,
    pub f1: MetricValue<T>,
    pub support: T,
}

/// Per-class precision/recall/F1 for one evaluation site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport<T> {
    pub classes: BTreeMap<Label, ClassMetrics<T>>,
    pub accuracy: T,
}

fn class_metrics<T: Scalar>(tp: u64, fn_: u64, fp: u64) -> ClassMetrics<T> {
    let precision = MetricValue::ratio(tp, tp + fp, Undefined::NoPositivePredictions);
    let recall = MetricValue::ratio(tp, tp + fn_, Undefined::NoPositiveTruths);
    ClassMetrics {
        precision,
        recall,
        f1: f1_of(precision, recall),
        support: T::lit((tp + fn_) as f64),
    }
}

pub fn class_report<T: Scalar>(cm: &ConfusionMatrix) -> Result<ClassReport<T>, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut classes = BTreeMap::new();
    classes.insert(Label::Plastic, class_metrics(cm.true_pos, cm.false_neg, cm.false_pos));
    classes.insert(Label::Water, class_metrics(cm.true_neg, cm.false_pos, cm.false_neg));
    Ok(ClassReport {
        classes,
        accuracy: T::lit((cm.true_pos + cm.true_neg) as f64 / cm.total() as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics<T> {
    pub precision: MetricValue<T>,
    pub recall: MetricValue<T>,
    pub f1: MetricValue<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport<T> {
    /// Per-class metrics and supports averaged across reports.
    pub classes: BTreeMap<Label, ClassMetrics<T>>,
    pub accuracy: T,
    pub macro_avg: AveragedMetrics<T>,
    pub weighted_avg: AveragedMetrics<T>,
    pub total_support: T,
}

fn mean_value<T: Scalar>(values: impl Iterator<Item = MetricValue<T>>) -> MetricValue<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for v in values {
        match v {
            MetricValue::Value(x) => sum += x,
            MetricValue::NotAValue(_) => return MetricValue::NotAValue(Undefined::UndefinedInput),
        }
        n += 1;
    }
    MetricValue::Value(sum / T::lit(n as f64))
}

fn weighted_value<T: Scalar>(pairs: impl Iterator<Item = (MetricValue<T>, T)>) -> MetricValue<T> {
    let mut sum = T::zero();
    let mut weight = T::zero();
    for (v, w) in pairs {
        match v {
            MetricValue::Value(x) => sum += x * w,
            MetricValue::NotAValue(_) => return MetricValue::NotAValue(Undefined::UndefinedInput),
        }
        weight += w;
    }
    if weight == T::zero() {
        MetricValue::NotAValue(Undefined::NoPositiveTruths)
    } else {
        MetricValue::Value(sum / weight)
    }
}

/// Averages site reports: per-class metrics, supports and accuracy are
/// unweighted means across reports; macro is the class mean and weighted
/// uses the averaged supports. Undefined inputs stay undefined.
pub fn average_reports<T: Scalar>(reports: &[ClassReport<T>]) -> Result<AggregateReport<T>, MetricsError> {
    let first = reports.first().ok_or(MetricsError::EmptyInput)?;
    let labels: Vec<Label> = first.classes.keys().copied().collect();
    if reports
        .iter()
        .any(|r| !r.classes.keys().copied().eq(labels.iter().copied()))
    {
        return Err(MetricsError::ClassSetMismatch);
    }
    let k = T::lit(reports.len() as f64);
    let classes: BTreeMap<Label, ClassMetrics<T>> = labels
        .iter()
        .map(|l| {
            let rows = || reports.iter().map(move |r| r.classes[l]);
            let m = ClassMetrics {
                precision: mean_value(rows().map(|c| c.precision)),
                recall: mean_value(rows().map(|c| c.recall)),
                f1: mean_value(rows().map(|c| c.f1)),
                support: rows().map(|c| c.support).sum::<T>() / k,
            };
            (*l, m)
        })
        .collect();
    let accuracy = reports.iter().map(|r| r.accuracy).sum::<T>() / k;
    let macro_avg = AveragedMetrics {
        precision: mean_value(classes.values().map(|c| c.precision)),
        recall: mean_value(classes.values().map(|c| c.recall)),
        f1: mean_value(classes.values().map(|c| c.f1)),
    };
    let weighted_avg = AveragedMetrics {
        precision: weighted_value(classes.values().map(|c| (c.precision, c.support))),
        recall: weighted_value(classes.values().map(|c| (c.recall, c.support))),
        f1: weighted_value(classes.values().map(|c| (c.f1, c.support))),
    };
    let total_support = classes.values().map(|c| c.support).sum();
    Ok(AggregateReport {
        classes,
        accuracy,
        macro_avg,
        weighted_avg,
        total_support,
    })
}

impl<T: Scalar> From<ClassReport<T>> for AggregateReport<T> {
    fn from(r: ClassReport<T>) -> Self {
        average_reports(std::slice::from_ref(&r)).expect("single report is consistent")
    }
}

fn fixed<T: Scalar>(v: MetricValue<T>, places: usize) -> String {
    match v {
        MetricValue::Value(x) => format!("{:.*}", places, x.as_f64()),
        MetricValue::NotAValue(_) => "NA".to_string(),
    }
}

/// Metric rows as CSV (`metric,value`), NA for undefined values.
pub fn metrics_csv<T: Scalar>(report: &MetricsReport<T>) -> String {
    let mut out = String::from("metric,value\n");
    for (name, v) in report.entries() {
        out.push_str(&format!("{},{}\n", name.as_str(), v));
    }
    out
}

/// Fixed-width text rendering of one metrics column.
pub fn render_metrics<T: Scalar>(report: &MetricsReport<T>) -> String {
    let mut out = String::new();
    for (name, v) in report.entries() {
        out.push_str(&format!("{:<20}{:>8}\n", name.title(), fixed(v, 3)));
    }
    out
}

/// Text table with precision / recall / F1 / support columns.
pub fn render_aggregate<T: Scalar>(report: &AggregateReport<T>) -> String {
    let mut out = format!("{:<18}{:>10}{:>10}{:>10}{:>10}\n", "", "Precision", "Recall", "F1-score", "Support");
    for (label, c) in &report.classes {
        out.push_str(&format!(
            "{:<18}{:>10}{:>10}{:>10}{:>10.2}\n",
            format!("Class {}", label.code()),
            fixed(c.precision, 2),
            fixed(c.recall, 2),
            fixed(c.f1, 2),
            c.support.as_f64()
        ));
    }
    let acc = format!("{:.2}", report.accuracy.as_f64());
    out.push_str(&format!("{:<18}{:>10}{:>10}{:>10}{:>10}\n", "Accuracy", acc, acc, acc, acc));
    for (name, avg) in [("Macro average", &report.macro_avg), ("Weighted average", &report.weighted_avg)] {
        out.push_str(&format!(
            "{:<18}{:>10}{:>10}{:>10}{:>10.2}\n",
            name,
            fixed(avg.precision, 2),
            fixed(avg.recall, 2),
            fixed(avg.f1, 2),
            report.total_support.as_f64()
        ));
    }
    out
}
