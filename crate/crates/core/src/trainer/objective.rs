use crate::diffcore::{Real, RealArray};
use crate::error::{Error, Result};
use crate::losses::{
    mil_loss, pide_loss, select_extremes, total_loss, ExtremeSelection, LossBreakdown,
    MilReduction,
};
use crate::model::{backward, forward, ForwardPass, ModelGrads, ModelParams};

/// Which terms make up the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub use_pil: bool,
    /// Weight of the contrastive term; zero skips it entirely.
    pub lambda: f64,
    pub tau_c: f64,
    pub mil: MilReduction,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            use_pil: true,
            lambda: 5.0,
            tau_c: 0.1,
            mil: MilReduction::Max,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchObjective<T = f32> {
    pub losses: LossBreakdown,
    pub total: T,
    pub grads: ModelGrads<T>,
    pub pass: ForwardPass<T>,
    pub selection: ExtremeSelection,
}

/// Forward pass, `L_mil + λ·L_pide`, and the gradient of that total with
/// respect to every parameter block.
pub fn batch_objective<T: Real>(
    params: &ModelParams<T>,
    features: &RealArray<T>,
    lengths: &[usize],
    bag_labels: &[u8],
    cfg: &ObjectiveConfig,
) -> Result<BatchObjective<T>> {
    let pass = forward(params, features, lengths, cfg.use_pil)?;
    let scores = pass.instance_scores();
    let mil = mil_loss(&scores, bag_labels, cfg.mil)?;

    let lambda = T::lit(cfg.lambda);
    let (l_pide, d_enhanced, selection) = if cfg.lambda > 0.0 {
        let selection = select_extremes(&scores, 1)?;
        let pide = pide_loss(&pass.enhanced, &selection, T::lit(cfg.tau_c))?;
        let mut d = pide.d_enhanced;
        d.as_mut_slice().iter_mut().for_each(|g| *g *= lambda);
        (pide.value, Some(d), selection)
    } else {
        (T::zero(), None, ExtremeSelection::default())
    };

    let total = total_loss(mil.value, l_pide, lambda);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss (mil {}, pide {})",
            mil.value, l_pide
        )));
    }
    let grads = backward(params, &pass, &mil.d_logits, d_enhanced.as_ref())?;
    let to64 = |x: T| x.to_f64().unwrap_or(f64::NAN);
    Ok(BatchObjective {
        losses: LossBreakdown::new(to64(mil.value), to64(l_pide), cfg.lambda),
        total,
        grads,
        pass,
        selection,
    })
}
