use super::{argmax, InstanceScores};
use crate::diffcore::{sigmoid, softplus, Real, RealArray};
use crate::error::{Error, Result};

/// How a bag's instance scores are pooled before the cross-entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MilReduction {
    /// Highest-scoring instance; lowest index wins ties.
    #[default]
    Max,
    /// Mean of the `k` highest scores (clipped to the bag length).
    TopKMean(usize),
}

#[derive(Clone, Debug)]
pub struct MilLoss<T = f32> {
    pub value: T,
    /// `[B × T]`, non-zero only at the pooled instances.
    pub d_logits: RealArray<T>,
}

/// Binary cross-entropy between each bag's pooled score and its label,
/// averaged over the batch.
pub fn mil_loss<T: Real>(
    scores: &InstanceScores<T>,
    bag_labels: &[u8],
    reduction: MilReduction,
) -> Result<MilLoss<T>> {
    let b = scores.batch_size();
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    if bag_labels.len() != b {
        return Err(Error::Shape {
            op: "mil_loss labels",
            lhs: vec![b],
            rhs: vec![bag_labels.len()],
        });
    }
    if let Some(&bad) = bag_labels.iter().find(|&&y| y > 1) {
        return Err(Error::config(format!("bag label must be 0 or 1, got {bad}")));
    }
    if let Some(bag) = scores.lengths().iter().position(|&l| l == 0) {
        return Err(Error::config(format!("bag {bag} has no instances")));
    }

    let t = scores.max_len();
    let inv_b = T::one() / T::lit(b as f64);
    let mut d_logits = RealArray::zeros(&[b, t]);
    let mut total = T::zero();

    for (bag, &label) in bag_labels.iter().enumerate() {
        let y = T::lit(label as f64);
        let bag_scores = scores.bag_scores(bag);
        match reduction {
            MilReduction::Max | MilReduction::TopKMean(1) => {
                let i = argmax(bag_scores).expect("non-empty bag");
                let z = scores.bag_logits(bag)[i];
                // BCE(σ(z), y) = y·softplus(-z) + (1 - y)·softplus(z)
                total += y * softplus(-z) + (T::one() - y) * softplus(z);
                d_logits.as_mut_slice()[bag * t + i] = (sigmoid(z) - y) * inv_b;
            }
            MilReduction::TopKMean(k) => {
                if k == 0 {
                    return Err(Error::config("top-k MIL pooling needs k >= 1"));
                }
                let mut order: Vec<usize> = (0..bag_scores.len()).collect();
                order.sort_by(|&a, &c| bag_scores[c].partial_cmp(&bag_scores[a]).unwrap().then(a.cmp(&c)));
                order.truncate(k);
                let kk = T::lit(order.len() as f64);
                let p_raw = order.iter().map(|&i| bag_scores[i]).sum::<T>() / kk;
                let clamp = T::lit(1e-7);
                let p = p_raw.max(clamp).min(T::one() - clamp);
                total += -(y * p.ln() + (T::one() - y) * (T::one() - p).ln());
                let d_p = (p - y) / (p * (T::one() - p));
                for &i in &order {
                    let s = bag_scores[i];
                    d_logits.as_mut_slice()[bag * t + i] = d_p / kk * s * (T::one() - s) * inv_b;
                }
            }
        }
    }
    Ok(MilLoss {
        value: total * inv_b,
        d_logits,
    })
}
