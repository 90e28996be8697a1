//! Bag-level MIL loss, extreme-instance pseudo-labelling and the
//! supervised-contrastive loss on the selected features.

mod contrastive;
mod mil;
mod selection;

pub use contrastive::{pide_loss, PideLoss, PIDE_EPS};
pub use mil::{mil_loss, MilLoss, MilReduction};
pub use selection::{select_extremes, ExtremeSelection, PseudoLabel, Selected};

use crate::diffcore::{sigmoid, Real, RealArray};
use crate::error::{Error, Result};

/// Per-instance logits and sigmoid scores for a padded batch, with the true
/// length of each bag. Entries at or beyond a bag's length are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceScores<T = f32> {
    logits: RealArray<T>,
    scores: RealArray<T>,
    lengths: Vec<usize>,
}

impl<T: Real> InstanceScores<T> {
    /// `logits` is `[B × T]` or `[B × T × 1]`.
    pub fn from_logits(logits: RealArray<T>, lengths: Vec<usize>) -> Result<Self> {
        let (b, t) = bt(logits.shape())?;
        check_lengths(b, t, &lengths)?;
        let logits = logits.reshape(&[b, t])?;
        let scores = RealArray::from_fn(&[b, t, 1], |i| sigmoid(logits.as_slice()[i]));
        Ok(Self {
            logits,
            scores,
            lengths,
        })
    }

    /// Builds from probabilities in `(0, 1)`; logits are recovered by the
    /// inverse sigmoid.
    pub fn from_scores(scores: RealArray<T>, lengths: Vec<usize>) -> Result<Self> {
        let (b, t) = bt(scores.shape())?;
        check_lengths(b, t, &lengths)?;
        let scores = scores.reshape(&[b, t, 1])?;
        let logits = RealArray::from_fn(&[b, t], |i| {
            let s = scores.as_slice()[i];
            (s / (T::one() - s)).ln()
        });
        Ok(Self {
            logits,
            scores,
            lengths,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// `[B × T × 1]`
    pub fn scores(&self) -> &RealArray<T> {
        &self.scores
    }

    /// `[B × T]`
    pub fn logits(&self) -> &RealArray<T> {
        &self.logits
    }

    /// Valid scores of bag `b`.
    pub fn bag_scores(&self, b: usize) -> &[T] {
        let t = self.max_len();
        &self.scores.as_slice()[b * t..b * t + self.lengths[b]]
    }

    pub fn bag_logits(&self, b: usize) -> &[T] {
        let t = self.max_len();
        &self.logits.as_slice()[b * t..b * t + self.lengths[b]]
    }
}

fn bt(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        &[b, t] | &[b, t, 1] => Ok((b, t)),
        other => Err(Error::Shape {
            op: "instance scores [B×T×1]",
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

fn check_lengths(b: usize, t: usize, lengths: &[usize]) -> Result<()> {
    if lengths.len() != b || lengths.iter().any(|&l| l > t) {
        return Err(Error::Shape {
            op: "bag lengths",
            lhs: vec![b, t],
            rhs: lengths.to_vec(),
        });
    }
    Ok(())
}

/// Index of the first maximum.
pub(crate) fn argmax<T: Real>(xs: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index of the first minimum.
pub(crate) fn argmin<T: Real>(xs: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|b| x < xs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Loss components of one training step.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub l_mil: f64,
    pub l_pide: f64,
    pub l_total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(l_mil: f64, l_pide: f64, lambda: f64) -> Self {
        Self {
            l_mil,
            l_pide,
            l_total: total_loss(l_mil, l_pide, lambda),
            lambda,
        }
    }
}

/// `l_mil + lambda · l_pide`
pub fn total_loss<T: Real>(l_mil: T, l_pide: T, lambda: T) -> T {
    l_mil + lambda * l_pide
}
