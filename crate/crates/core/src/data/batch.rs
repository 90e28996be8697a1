use super::FeatureBag;
use crate::diffcore::{Real, RealArray};
use crate::error::{Error, Result};

/// Bags zero-padded to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T = f32> {
    /// `[B × T_max × D]`
    pub features: RealArray<T>,
    pub lengths: Vec<usize>,
    pub bag_labels: Vec<u8>,
    pub frame_labels: Vec<Option<Vec<u8>>>,
    pub ids: Vec<String>,
}

impl<T: Real> Batch<T> {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            features: self.features.cast(),
            lengths: self.lengths.clone(),
            bag_labels: self.bag_labels.clone(),
            frame_labels: self.frame_labels.clone(),
            ids: self.ids.clone(),
        }
    }
}

/// Stacks `bags` into one padded batch. `pad_to` defaults to the longest bag
/// and may not be shorter than it.
pub fn assemble_batch(bags: &[&FeatureBag], pad_to: Option<usize>) -> Result<Batch<f32>> {
    let first = bags.first().ok_or(Error::Empty("batch"))?;
    let d = first.dim();
    if let Some(bad) = bags.iter().find(|b| b.dim() != d) {
        return Err(Error::Shape {
            op: "assemble_batch feature width",
            lhs: vec![d],
            rhs: vec![bad.dim()],
        });
    }
    let longest = bags.iter().map(|b| b.len()).max().unwrap_or(0);
    let t = pad_to.unwrap_or(longest);
    if t < longest {
        return Err(Error::config(format!("pad_to {t} is shorter than the longest bag ({longest})")));
    }
    let mut features = RealArray::zeros(&[bags.len(), t, d]);
    for (i, bag) in bags.iter().enumerate() {
        let start = i * t * d;
        features.as_mut_slice()[start..start + bag.len() * d]
            .copy_from_slice(bag.features().as_slice());
    }
    Ok(Batch {
        features,
        lengths: bags.iter().map(|b| b.len()).collect(),
        bag_labels: bags.iter().map(|b| b.bag_label()).collect(),
        frame_labels: bags.iter().map(|b| b.frame_labels().map(<[u8]>::to_vec)).collect(),
        ids: bags.iter().map(|b| b.id.clone()).collect(),
    })
}
