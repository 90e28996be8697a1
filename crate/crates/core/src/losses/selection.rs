use super::{argmax, argmin, InstanceScores};
use crate::diffcore::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PseudoLabel {
    /// Highest-scoring instance of its bag (+1).
    Anomalous,
    /// Lowest-scoring instance of its bag (−1).
    Normal,
}

impl PseudoLabel {
    pub fn sign(self) -> i8 {
        match self {
            PseudoLabel::Anomalous => 1,
            PseudoLabel::Normal => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selected {
    pub bag: usize,
    pub index: usize,
    pub label: PseudoLabel,
}

/// Pseudo-labelled extreme instances, in bag order with each bag's `+1`
/// entry before its `−1` entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtremeSelection {
    pub entries: Vec<Selected>,
}

impl ExtremeSelection {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Picks the argmax (`+1`) and argmin (`−1`) instance of every bag with more
/// than one instance. Bags whose argmax and argmin coincide are skipped.
/// Only `m == 1` is supported.
pub fn select_extremes<T: Real>(scores: &InstanceScores<T>, m: usize) -> Result<ExtremeSelection> {
    if m != 1 {
        return Err(Error::config(format!(
            "only one extreme instance per bag is supported (m = 1), got m = {m}"
        )));
    }
    let mut entries = Vec::new();
    for bag in 0..scores.batch_size() {
        let s = scores.bag_scores(bag);
        if s.len() <= 1 {
            continue;
        }
        let (hi, lo) = (argmax(s).unwrap(), argmin(s).unwrap());
        if hi == lo {
            continue;
        }
        entries.push(Selected {
            bag,
            index: hi,
            label: PseudoLabel::Anomalous,
        });
        entries.push(Selected {
            bag,
            index: lo,
            label: PseudoLabel::Normal,
        });
    }
    Ok(ExtremeSelection { entries })
}
