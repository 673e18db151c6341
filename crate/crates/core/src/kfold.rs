//! K-fold cross-validation over a sample corpus.
//!
//! For each fold a fresh model is trained on every other fold and scored on
//! the held-out one. Confusion counts are summed over the fold's pixels
//! before the metrics are taken; the report then averages the per-fold rows.

use crate::data::{ClassMask, SegSample};
use crate::error::{Error, Result};
use crate::metrics::{confusion, metrics_from_counts, ConfusionCounts, MetricReport};

/// Twelve folds over 53 samples, one fold per physical pothole of the
/// reference benchmark.
pub const REFERENCE_FOLD_SIZES: [usize; 12] = [13, 9, 5, 4, 3, 2, 3, 3, 2, 2, 2, 5];

/// A partition of sample indices into folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSpec {
    folds: Vec<Vec<usize>>,
}

impl FoldSpec {
    /// Explicit folds; must partition `0..n` for the corpus they are used on.
    pub fn new(folds: Vec<Vec<usize>>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Config("a fold spec needs at least one fold".into()));
        }
        if let Some(i) = folds.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("fold {} is empty", i + 1)));
        }
        Ok(Self { folds })
    }

    /// Consecutive runs of the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let folds = sizes
            .iter()
            .map(|&n| {
                let f = (start..start + n).collect();
                start += n;
                f
            })
            .collect();
        Self::new(folds)
    }

    /// `k` consecutive folds over `n` samples whose sizes differ by at most
    /// one, larger folds first.
    pub fn even(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("cannot split {n} samples into {k} non-empty folds")));
        }
        let sizes: Vec<usize> = (0..k).map(|i| n / k + usize::from(i < n % k)).collect();
        Self::from_sizes(&sizes)
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Same folds in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("{order:?} is not a permutation of the folds")));
            }
        }
        if order.len() != self.len() {
            return Err(Error::Config(format!("{order:?} is not a permutation of the folds")));
        }
        Self::new(order.iter().map(|&i| self.folds[i].clone()).collect())
    }

    /// Checks that the folds partition `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut owner = vec![None; n];
        for (f, fold) in self.folds.iter().enumerate() {
            for &i in fold {
                let slot = owner.get_mut(i).ok_or_else(|| {
                    Error::Config(format!("fold {} names sample {i} of a {n}-sample corpus", f + 1))
                })?;
                if let Some(prev) = slot.replace(f) {
                    return Err(Error::Config(format!("sample {i} is in folds {} and {}", prev + 1, f + 1)));
                }
            }
        }
        if let Some(i) = owner.iter().position(Option::is_none) {
            return Err(Error::Config(format!("sample {i} is in no fold")));
        }
        Ok(())
    }
}

pub trait Predictor {
    fn predict(&self, sample: &SegSample) -> Result<ClassMask>;
}

pub trait Trainer {
    type Model: Predictor;
    /// Trains a fresh model for held-out fold `fold` (zero-based).
    fn fit(&self, fold: usize, train: &[&SegSample]) -> Result<Self::Model>;
}

/// Echoes each sample's label. Scores 1.0 on every metric.
#[derive(Clone, Copy, Debug, Default)]
pub struct Oracle;

impl Predictor for Oracle {
    fn predict(&self, sample: &SegSample) -> Result<ClassMask> {
        Ok(sample.label.clone())
    }
}

impl Trainer for Oracle {
    type Model = Oracle;
    fn fit(&self, _fold: usize, _train: &[&SegSample]) -> Result<Oracle> {
        Ok(Oracle)
    }
}

/// Confusion counts summed over `samples`.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, samples: &[&SegSample]) -> Result<ConfusionCounts> {
    samples.iter().map(|s| confusion(&model.predict(s)?, &s.label)).sum()
}

pub fn kfold_run<T: Trainer>(samples: &[SegSample], folds: &FoldSpec, trainer: &T) -> Result<MetricReport> {
    folds.check_partition(samples.len())?;
    let mut rows = Vec::with_capacity(folds.len());
    for (f, held) in folds.folds().iter().enumerate() {
        let mut in_fold = vec![false; samples.len()];
        held.iter().for_each(|&i| in_fold[i] = true);
        let train: Vec<&SegSample> =
            samples.iter().zip(&in_fold).filter(|(_, &h)| !h).map(|(s, _)| s).collect();
        let test: Vec<&SegSample> = held.iter().map(|&i| &samples[i]).collect();
        let model = trainer.fit(f, &train)?;
        rows.push(metrics_from_counts(&evaluate(&model, &test)?)?);
    }
    MetricReport::from_rows(rows)
}
