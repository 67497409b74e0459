//! Confusion-matrix accounting and the accuracy/precision/recall/F1 set,
//! with Satire as the positive class.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GoldLabel;
use crate::parser::{ParsedPrediction, PredictedLabel};

/// How a response with no extractable label enters the confusion matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnparseablePolicy {
    /// Scored as the wrong class for the gold label.
    #[default]
    CountAsWrong,
    /// Left out of every metric denominator.
    Exclude,
    /// Scored as a NonSatire prediction.
    CountAsNegative,
}

impl UnparseablePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            UnparseablePolicy::CountAsWrong => "count-as-wrong",
            UnparseablePolicy::Exclude => "exclude",
            UnparseablePolicy::CountAsNegative => "count-as-negative",
        }
    }
}

impl fmt::Display for UnparseablePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnparseablePolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "count-as-wrong" | "wrong" => Ok(UnparseablePolicy::CountAsWrong),
            "exclude" => Ok(UnparseablePolicy::Exclude),
            "count-as-negative" | "negative" => Ok(UnparseablePolicy::CountAsNegative),
            other => Err(EvalError::UnknownPolicy(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no scored records")]
    Empty,
    #[error("{name} = {value} is outside [0, 100]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("unknown unparseable policy {0:?}")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Unparseable responses, whatever the policy did with them.
    pub n_unparseable: u64,
    /// Unparseable responses left out of the 2x2 table (Exclude policy).
    pub n_excluded: u64,
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    /// Tallies one record.
    pub fn accumulate(
        mut self,
        gold: GoldLabel,
        predicted: &ParsedPrediction,
        policy: UnparseablePolicy,
    ) -> ConfusionMatrix {
        self.tally(gold, predicted.label, policy);
        self
    }

    pub fn tally(&mut self, gold: GoldLabel, predicted: PredictedLabel, policy: UnparseablePolicy) {
        let pred_satire = match predicted {
            PredictedLabel::Satire => true,
            PredictedLabel::NonSatire => false,
            PredictedLabel::Unparseable => {
                self.n_unparseable += 1;
                match policy {
                    UnparseablePolicy::CountAsWrong => !gold.is_satire(),
                    UnparseablePolicy::CountAsNegative => false,
                    UnparseablePolicy::Exclude => {
                        self.n_excluded += 1;
                        return;
                    }
                }
            }
        };
        match (gold.is_satire(), pred_satire) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Records entering the metric denominators.
    pub fn scored(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Every record ever accumulated.
    pub fn total(&self) -> u64 {
        self.scored() + self.n_excluded
    }

    pub fn metrics(&self, policy: UnparseablePolicy) -> Result<MetricsReport, EvalError> {
        metrics(self, policy)
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
            n_unparseable: self.n_unparseable + o.n_unparseable,
            n_excluded: self.n_excluded + o.n_excluded,
        }
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: ConfusionMatrix) {
        *self = *self + o;
    }
}

/// Metric set for one experiment cell. Percentages are rounded to one
/// decimal; F1 is derived from the unrounded precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub parse_rate: f64,
    pub policy: UnparseablePolicy,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of two ratios, zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(
    cm: &ConfusionMatrix,
    policy: UnparseablePolicy,
) -> Result<MetricsReport, EvalError> {
    let scored = cm.scored();
    if scored == 0 && cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let total = cm.total();
    Ok(MetricsReport {
        accuracy: round1(100.0 * ratio(cm.tp + cm.tn, scored)),
        precision: round1(100.0 * precision),
        recall: round1(100.0 * recall),
        f1: round1(100.0 * f1_score(precision, recall)),
        parse_rate: round1(100.0 * ratio(total - cm.n_unparseable, total)),
        policy,
    })
}

/// Outcome of checking one published metric row against F1 = 2PR/(P+R).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowVerdict {
    pub consistent: bool,
    pub recomputed_f1: f64,
    pub deviation: f64,
}

/// Slack allowed between a published F1 and the F1 recomputed from the
/// published (one-decimal) precision and recall.
pub const F1_TOLERANCE: f64 = 0.15;

pub fn validate_published_row(
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
) -> Result<RowVerdict, EvalError> {
    for (name, value) in [
        ("accuracy", accuracy),
        ("precision", precision),
        ("recall", recall),
        ("f1", f1),
    ] {
        if !(0.0..=100.0).contains(&value) {
            return Err(EvalError::OutOfRange { name, value });
        }
    }
    let recomputed = f1_score(precision, recall);
    let deviation = (recomputed - f1).abs();
    Ok(RowVerdict {
        consistent: deviation <= F1_TOLERANCE,
        recomputed_f1: recomputed,
        deviation,
    })
}
