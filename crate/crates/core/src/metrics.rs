//! Confusion counts, per-class precision/recall and Hmean (F1).

use serde::{Deserialize, Serialize};

use crate::domain::RotationClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// One-vs-rest counts for each class, indexed by [`RotationClass::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub horizontal: ClassCounts,
    pub vertical: ClassCounts,
}

impl ConfusionCounts {
    pub fn class(&self, c: RotationClass) -> &ClassCounts {
        match c {
            RotationClass::Horizontal => &self.horizontal,
            RotationClass::Vertical => &self.vertical,
        }
    }

    fn class_mut(&mut self, c: RotationClass) -> &mut ClassCounts {
        match c {
            RotationClass::Horizontal => &mut self.horizontal,
            RotationClass::Vertical => &mut self.vertical,
        }
    }

    pub fn samples(&self) -> usize {
        self.horizontal.total()
    }

    pub fn correct(&self) -> usize {
        self.horizontal.tp + self.vertical.tp
    }

    pub fn accuracy(&self) -> f64 {
        match self.samples() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

pub fn confusion(
    predictions: &[RotationClass],
    truths: &[RotationClass],
) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("confusion needs at least one prediction"));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        for c in RotationClass::ALL {
            let k = counts.class_mut(c);
            match (p == c, t == c) {
                (true, true) => k.tp += 1,
                (true, false) => k.fp += 1,
                (false, true) => k.fn_ += 1,
                (false, false) => k.tn += 1,
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub hmean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub horizontal: ClassMetrics,
    pub vertical: ClassMetrics,
    pub macro_hmean: f64,
    pub accuracy: f64,
}

impl EvalReport {
    pub fn class(&self, c: RotationClass) -> &ClassMetrics {
        match c {
            RotationClass::Horizontal => &self.horizontal,
            RotationClass::Vertical => &self.vertical,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(k: &ClassCounts) -> ClassMetrics {
    let precision = ratio(k.tp, k.tp + k.fp);
    let recall = ratio(k.tp, k.tp + k.fn_);
    let hmean = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        hmean,
    }
}

/// Per-class precision, recall and Hmean plus their macro average.
/// Zero denominators yield 0.
pub fn hmean(counts: &ConfusionCounts) -> EvalReport {
    let horizontal = class_metrics(&counts.horizontal);
    let vertical = class_metrics(&counts.vertical);
    EvalReport {
        counts: *counts,
        horizontal,
        vertical,
        macro_hmean: (horizontal.hmean + vertical.hmean) / 2.0,
        accuracy: counts.accuracy(),
    }
}

pub fn report(predictions: &[RotationClass], truths: &[RotationClass]) -> Result<EvalReport> {
    Ok(hmean(&confusion(predictions, truths)?))
}
