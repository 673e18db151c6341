//! Pixel-level confusion counts and the five segmentation metrics.
//!
//! Pothole is the positive class. Within a fold, counts are summed over all
//! pixels before any ratio is taken; across folds, each metric is the
//! arithmetic mean of the per-fold values.
//!
//! A ratio whose denominator is zero evaluates to 1 when the prediction and
//! the label are both empty (`tp = fp = fn = 0`) and to 0 otherwise.

use std::fmt::{self, Write as _};
use std::ops::{Add, AddAssign};

use crate::data::ClassMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn new(true_pos: u64, false_pos: u64, false_neg: u64, true_neg: u64) -> Self {
        Self { true_pos, false_pos, false_neg, true_neg }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self::new(self.true_pos * k, self.false_pos * k, self.false_neg * k, self.true_neg * k)
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.true_pos + o.true_pos,
            self.false_pos + o.false_pos,
            self.false_neg + o.false_neg,
            self.true_neg + o.true_neg,
        )
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn confusion(pred: &ClassMask, label: &ClassMask) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (label.height(), label.width()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs label {}x{}",
            pred.height(),
            pred.width(),
            label.height(),
            label.width()
        )));
    }
    // index = 2·pred + label → [tn, fn, fp, tp]
    let mut bins = [0u64; 4];
    for (&p, &l) in pred.data().iter().zip(label.data()) {
        bins[(2 * p + l) as usize] += 1;
    }
    Ok(ConfusionCounts::new(bins[3], bins[2], bins[1], bins[0]))
}

/// One row of the five metrics, each in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub pre: f64,
    pub rec: f64,
    pub acc: f64,
    pub fsc: f64,
    pub iou: f64,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 5] {
        [self.pre, self.rec, self.acc, self.fsc, self.iou]
    }
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> Result<MetricRow> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Value("metrics of an empty pixel set".into()));
    }
    let nothing = c.true_pos == 0 && c.false_pos == 0 && c.false_neg == 0;
    let ratio = |num: f64, den: f64| -> f64 {
        if den == 0.0 {
            if nothing {
                1.0
            } else {
                0.0
            }
        } else {
            num / den
        }
    };
    let (tp, fp, fneg, tn) =
        (c.true_pos as f64, c.false_pos as f64, c.false_neg as f64, c.true_neg as f64);
    let pre = ratio(tp, tp + fp);
    let rec = ratio(tp, tp + fneg);
    let acc = (tp + tn) / total as f64;
    let fsc = ratio(2.0 * pre * rec, pre + rec);
    let iou = ratio(tp, tp + fp + fneg);
    Ok(MetricRow { pre, rec, acc, fsc, iou })
}

/// Per-fold rows and their arithmetic means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Value("report needs at least one fold".into()));
        }
        let n = rows.len() as f64;
        let mean_of = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean = MetricRow {
            pre: mean_of(|r| r.pre),
            rec: mean_of(|r| r.rec),
            acc: mean_of(|r| r.acc),
            fsc: mean_of(|r| r.fsc),
            iou: mean_of(|r| r.iou),
        };
        Ok(Self { rows, mean })
    }

    /// Text document: a tab-separated per-fold table (folds numbered from 1)
    /// followed by one `key<TAB>value` line per mean, values to 3 decimals.
    pub fn to_document(&self) -> String {
        let mut out = String::from("fold\tpre\trec\tacc\tfsc\tiou\n");
        for (i, r) in self.rows.iter().enumerate() {
            let [a, b, c, d, e] = r.values();
            writeln!(out, "{}\t{a:.3}\t{b:.3}\t{c:.3}\t{d:.3}\t{e:.3}", i + 1).unwrap();
        }
        for (key, v) in ["mPre", "mRec", "mAcc", "mFsc", "mIoU"].iter().zip(self.mean.values()) {
            writeln!(out, "{key}\t{v:.3}").unwrap();
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_document())
    }
}
