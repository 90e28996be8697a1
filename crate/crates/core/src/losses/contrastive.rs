use super::selection::ExtremeSelection;
use crate::diffcore::{dot, l2_normalize, l2_normalize_vjp, Real, RealArray, NORM_EPS};
use crate::error::{Error, Result};

/// Added to the count of valid anchors before dividing.
pub const PIDE_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct PideLoss<T = f32> {
    pub value: T,
    /// `[B × T × D]`, non-zero only at selected instances.
    pub d_enhanced: RealArray<T>,
}

/// Supervised-contrastive loss over the selected enhanced features.
///
/// Each selected feature is L2-normalized and used as an anchor against all
/// other selected features; positives share its pseudo-label. For an anchor
/// `i` with positives `P(i)` and others `A(i)`:
///
/// `L_i = -1/|P(i)| Σ_{p∈P(i)} log( exp(ẑ_i·ẑ_p/τ) / Σ_{a∈A(i)} exp(ẑ_i·ẑ_a/τ) )`
///
/// and the loss is `Σ L_i / (#anchors with |P(i)| > 0 + ε)`. Fewer than two
/// selected instances give exactly zero.
pub fn pide_loss<T: Real>(
    enhanced: &RealArray<T>,
    selection: &ExtremeSelection,
    tau_c: T,
) -> Result<PideLoss<T>> {
    if !(tau_c > T::zero()) {
        return Err(Error::config(format!("contrastive temperature must be > 0, got {tau_c}")));
    }
    let &[b, t, d] = enhanced.shape() else {
        return Err(Error::Shape {
            op: "pide_loss features [B×T×D]",
            lhs: enhanced.shape().to_vec(),
            rhs: vec![],
        });
    };
    for s in &selection.entries {
        if s.bag >= b || s.index >= t {
            return Err(Error::Shape {
                op: "pide_loss selection",
                lhs: vec![b, t],
                rhs: vec![s.bag, s.index],
            });
        }
    }
    let mut d_enhanced = RealArray::zeros(enhanced.shape());
    let n = selection.len();
    if n < 2 {
        return Ok(PideLoss {
            value: T::zero(),
            d_enhanced,
        });
    }

    let eps = T::lit(NORM_EPS);
    let rows: Vec<&[T]> = selection
        .entries
        .iter()
        .map(|s| enhanced.row(s.bag * t + s.index))
        .collect();
    let z: Vec<Vec<T>> = rows.iter().map(|r| l2_normalize(r, eps)).collect();
    let labels: Vec<_> = selection.entries.iter().map(|s| s.label).collect();

    // logits[i][j] = ẑ_i·ẑ_j / τ
    let mut logits = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dot(&z[i], &z[j]) / tau_c;
            logits[i * n + j] = v;
            logits[j * n + i] = v;
        }
    }

    let mut d_logits = vec![T::zero(); n * n];
    let mut total = T::zero();
    let mut valid = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        valid += 1;
        let row = &logits[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(T::neg_infinity(), T::max);
        let sum_exp: T = (0..n).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let inv_p = T::one() / T::lit(positives.len() as f64);
        let mean_pos = positives.iter().map(|&p| row[p]).sum::<T>() * inv_p;
        total += lse - mean_pos;

        let g = &mut d_logits[i * n..(i + 1) * n];
        for j in (0..n).filter(|&j| j != i) {
            g[j] = (row[j] - lse).exp();
        }
        for &p in &positives {
            g[p] -= inv_p;
        }
    }
    let denom = T::lit(valid as f64) + T::lit(PIDE_EPS);
    let value = total / denom;

    if valid > 0 {
        let scale = T::one() / (denom * tau_c);
        let mut d_z = vec![vec![T::zero(); d]; n];
        for i in 0..n {
            for j in 0..n {
                let g = d_logits[i * n + j];
                if g == T::zero() {
                    continue;
                }
                let g = g * scale;
                for c in 0..d {
                    d_z[i][c] += g * z[j][c];
                    d_z[j][c] += g * z[i][c];
                }
            }
        }
        for (k, s) in selection.entries.iter().enumerate() {
            let grad = l2_normalize_vjp(rows[k], &d_z[k], eps);
            let dst = d_enhanced.row_mut(s.bag * t + s.index);
            for (o, g) in dst.iter_mut().zip(grad) {
                *o += g;
            }
        }
    }
    Ok(PideLoss { value, d_enhanced })
}
