use super::params::{ClassifierHead, FusionTransform, ModelGrads, ModelParams, ParamBlock, PrototypeBank};
use crate::diffcore::{
    axpy, dot, l2_normalize, l2_normalize_vjp, sigmoid, softmax_temp, softmax_temp_vjp, Real,
    RealArray, NORM_EPS,
};
use crate::error::{Error, Result};
use crate::losses::InstanceScores;

/// Enhanced features and attention maps for every position of a batch.
#[derive(Clone, Debug)]
pub struct PilOutput<T = f32> {
    /// `[B × T × D]`
    pub enhanced: RealArray<T>,
    /// `[B × T × K]`
    pub attention: RealArray<T>,
}

struct NormalizedKeys<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Real> NormalizedKeys<T> {
    fn new(bank: &PrototypeBank<T>) -> Self {
        let eps = T::lit(NORM_EPS);
        let rows = (0..bank.count())
            .map(|k| l2_normalize(bank.keys.row(k), eps))
            .collect();
        Self { rows }
    }
}

fn batch_dims<T: Real>(features: &RealArray<T>, d: usize) -> Result<(usize, usize)> {
    match features.shape() {
        &[b, t, dd] if dd == d => Ok((b, t)),
        other => Err(Error::Shape {
            op: "feature batch [B×T×D]",
            lhs: other.to_vec(),
            rhs: vec![d],
        }),
    }
}

/// One instance through the prototype layer. Writes attention (`K`), context
/// (`D`) and enhanced feature (`D`).
fn pil_instance<T: Real>(
    f: &[T],
    keys: &NormalizedKeys<T>,
    bank: &PrototypeBank<T>,
    fusion: &FusionTransform<T>,
    attention: &mut [T],
    context: &mut [T],
    enhanced: &mut [T],
) -> Result<()> {
    let f_hat = l2_normalize(f, T::lit(NORM_EPS));
    let sims: Vec<T> = keys.rows.iter().map(|k| dot(&f_hat, k)).collect();
    let weights = softmax_temp(&sims, bank.tau_p)?;

    context.fill(T::zero());
    for (k, &a) in weights.iter().enumerate() {
        axpy(a, bank.values.row(k), context);
    }
    attention.copy_from_slice(&weights);

    enhanced.copy_from_slice(fusion.bias.as_slice());
    let w = fusion.weight.as_slice();
    let d = f.len();
    for (i, &c) in context.iter().enumerate() {
        axpy(c, &w[i * d..(i + 1) * d], enhanced);
    }
    for (e, &x) in enhanced.iter_mut().zip(f) {
        *e += x;
    }
    Ok(())
}

/// Returns the classifier logit; `hidden` receives the pre-activations.
fn classify_instance<T: Real>(x: &[T], head: &ClassifierHead<T>, hidden: &mut [T]) -> T {
    let h = hidden.len();
    hidden.copy_from_slice(head.hidden_bias.as_slice());
    let w = head.hidden_weight.as_slice();
    for (i, &xi) in x.iter().enumerate() {
        axpy(xi, &w[i * h..(i + 1) * h], hidden);
    }
    let out_w = head.output_weight.as_slice();
    hidden
        .iter()
        .zip(out_w)
        .map(|(&z, &w)| z.max(T::zero()) * w)
        .sum::<T>()
        + head.output_bias.as_slice()[0]
}

/// Applies the prototype interaction layer to every position of `features`.
pub fn pil_forward<T: Real>(
    features: &RealArray<T>,
    bank: &PrototypeBank<T>,
    fusion: &FusionTransform<T>,
) -> Result<PilOutput<T>> {
    let d = bank.dim();
    let k = bank.count();
    let (b, t) = batch_dims(features, d)?;
    if fusion.weight.shape() != [d, d] || fusion.bias.shape() != [d] {
        return Err(Error::Shape {
            op: "pil_forward fusion",
            lhs: vec![d, d],
            rhs: fusion.weight.shape().to_vec(),
        });
    }
    let keys = NormalizedKeys::new(bank);
    let mut enhanced = RealArray::zeros(&[b, t, d]);
    let mut attention = RealArray::zeros(&[b, t, k]);
    let mut context = vec![T::zero(); d];
    for r in 0..b * t {
        pil_instance(
            features.row(r),
            &keys,
            bank,
            fusion,
            attention.row_mut(r),
            &mut context,
            enhanced.row_mut(r),
        )?;
    }
    Ok(PilOutput {
        enhanced,
        attention,
    })
}

/// Sigmoid anomaly score for every position: `[B×T×D] -> [B×T×1]`.
pub fn score_instances<T: Real>(
    enhanced: &RealArray<T>,
    head: &ClassifierHead<T>,
) -> Result<RealArray<T>> {
    let d = head.hidden_weight.shape()[0];
    let (b, t) = batch_dims(enhanced, d)?;
    let mut hidden = vec![T::zero(); head.hidden_width()];
    let mut scores = RealArray::zeros(&[b, t, 1]);
    for r in 0..b * t {
        scores.as_mut_slice()[r] = sigmoid(classify_instance(enhanced.row(r), head, &mut hidden));
    }
    Ok(scores)
}

/// Cached intermediate values of a full forward pass over a padded batch.
/// Positions at or beyond a bag's length are left at zero.
#[derive(Clone, Debug)]
pub struct ForwardPass<T = f32> {
    pub lengths: Vec<usize>,
    pub use_pil: bool,
    features: RealArray<T>,
    /// `[B × T × K]`, zero when the prototype layer is disabled.
    pub attention: RealArray<T>,
    context: RealArray<T>,
    /// `[B × T × D]`
    pub enhanced: RealArray<T>,
    hidden: RealArray<T>,
    /// `[B × T]`
    pub logits: RealArray<T>,
}

impl<T: Real> ForwardPass<T> {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn instance_scores(&self) -> InstanceScores<T> {
        InstanceScores::from_logits(self.logits.clone(), self.lengths.clone())
            .expect("forward pass shapes are consistent")
    }
}

/// Runs the head over a padded `[B×T×D]` batch. With `use_pil == false` the
/// prototype layer is bypassed and `F' = F`.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    features: &RealArray<T>,
    lengths: &[usize],
    use_pil: bool,
) -> Result<ForwardPass<T>> {
    let dims = params.dims();
    let (b, t) = batch_dims(features, dims.d)?;
    if lengths.len() != b || lengths.iter().any(|&l| l > t) {
        return Err(Error::Shape {
            op: "forward lengths",
            lhs: vec![b, t],
            rhs: lengths.to_vec(),
        });
    }
    let keys = NormalizedKeys::new(&params.prototypes);
    let mut pass = ForwardPass {
        lengths: lengths.to_vec(),
        use_pil,
        features: features.clone(),
        attention: RealArray::zeros(&[b, t, dims.k]),
        context: RealArray::zeros(&[b, t, dims.d]),
        enhanced: RealArray::zeros(&[b, t, dims.d]),
        hidden: RealArray::zeros(&[b, t, dims.h]),
        logits: RealArray::zeros(&[b, t]),
    };
    for (bag, &len) in lengths.iter().enumerate() {
        for i in 0..len {
            let r = bag * t + i;
            if use_pil {
                pil_instance(
                    features.row(r),
                    &keys,
                    &params.prototypes,
                    &params.fusion,
                    pass.attention.row_mut(r),
                    pass.context.row_mut(r),
                    pass.enhanced.row_mut(r),
                )?;
            } else {
                pass.enhanced.row_mut(r).copy_from_slice(features.row(r));
            }
            let logit = classify_instance(
                pass.enhanced.row(r),
                &params.classifier,
                pass.hidden.row_mut(r),
            );
            pass.logits.as_mut_slice()[r] = logit;
        }
    }
    pass.logits.ensure_finite("classifier logits")?;
    Ok(pass)
}

/// Back-propagates upstream gradients on the logits (`[B×T]`) and,
/// optionally, directly on the enhanced features (`[B×T×D]`) into every
/// parameter block. Positions whose upstream gradients are all zero are
/// skipped.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    pass: &ForwardPass<T>,
    d_logits: &RealArray<T>,
    d_enhanced: Option<&RealArray<T>>,
) -> Result<ModelGrads<T>> {
    let dims = params.dims();
    let (b, t) = (pass.batch_size(), pass.max_len());
    if d_logits.shape() != [b, t] {
        return Err(Error::Shape {
            op: "backward d_logits",
            lhs: vec![b, t],
            rhs: d_logits.shape().to_vec(),
        });
    }
    if let Some(g) = d_enhanced {
        if g.shape() != pass.enhanced.shape() {
            return Err(Error::Shape {
                op: "backward d_enhanced",
                lhs: pass.enhanced.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    let (d, h) = (dims.d, dims.h);
    let eps = T::lit(NORM_EPS);
    let mut grads = params.zero_grads();
    let mut d_keys_hat = vec![T::zero(); dims.k * d];
    let mut g_enh = vec![T::zero(); d];
    let mut d_hidden = vec![T::zero(); h];
    let mut d_context = vec![T::zero(); d];

    let head = &params.classifier;
    let w1 = head.hidden_weight.as_slice();
    let w2 = head.output_weight.as_slice();
    let wc = params.fusion.weight.as_slice();

    for (bag, &len) in pass.lengths.iter().enumerate() {
        for i in 0..len {
            let r = bag * t + i;
            let dl = d_logits.as_slice()[r];
            match d_enhanced {
                Some(g) => g_enh.copy_from_slice(g.row(r)),
                None => g_enh.fill(T::zero()),
            }
            if dl == T::zero() && g_enh.iter().all(|&x| x == T::zero()) {
                continue;
            }
            let x = pass.enhanced.row(r);

            if dl != T::zero() {
                let pre = pass.hidden.row(r);
                grads.block_mut(ParamBlock::OutputBias).as_mut_slice()[0] += dl;
                let dw2 = grads.block_mut(ParamBlock::OutputWeight).as_mut_slice();
                for j in 0..h {
                    if pre[j] > T::zero() {
                        dw2[j] += dl * pre[j];
                        d_hidden[j] = dl * w2[j];
                    } else {
                        d_hidden[j] = T::zero();
                    }
                }
                axpy(T::one(), &d_hidden, grads.block_mut(ParamBlock::HiddenBias).as_mut_slice());
                let dw1 = grads.block_mut(ParamBlock::HiddenWeight).as_mut_slice();
                for (di, &xi) in x.iter().enumerate() {
                    axpy(xi, &d_hidden, &mut dw1[di * h..(di + 1) * h]);
                    g_enh[di] += dot(&w1[di * h..(di + 1) * h], &d_hidden);
                }
            }

            if !pass.use_pil {
                continue;
            }
            // f' = f + c·W_c + b_c
            let ctx = pass.context.row(r);
            axpy(T::one(), &g_enh, grads.block_mut(ParamBlock::FusionBias).as_mut_slice());
            let dwc = grads.block_mut(ParamBlock::FusionWeight).as_mut_slice();
            for (ci, &c) in ctx.iter().enumerate() {
                axpy(c, &g_enh, &mut dwc[ci * d..(ci + 1) * d]);
                d_context[ci] = dot(&wc[ci * d..(ci + 1) * d], &g_enh);
            }
            // c = Σ_k a_k v_k
            let attn = pass.attention.row(r);
            let mut d_attn = vec![T::zero(); dims.k];
            {
                let dv = grads.block_mut(ParamBlock::PrototypeValues);
                for k in 0..dims.k {
                    axpy(attn[k], &d_context, dv.row_mut(k));
                    d_attn[k] = dot(&d_context, params.prototypes.values.row(k));
                }
            }
            // a = softmax(sim / τ), sim_k = f̂ · k̂_k
            let d_sim = softmax_temp_vjp(attn, &d_attn, params.prototypes.tau_p);
            let f_hat = l2_normalize(pass.features.row(r), eps);
            for k in 0..dims.k {
                axpy(d_sim[k], &f_hat, &mut d_keys_hat[k * d..(k + 1) * d]);
            }
        }
    }

    if pass.use_pil {
        let dk = grads.block_mut(ParamBlock::PrototypeKeys);
        for k in 0..dims.k {
            let g = l2_normalize_vjp(
                params.prototypes.keys.row(k),
                &d_keys_hat[k * d..(k + 1) * d],
                eps,
            );
            dk.row_mut(k).copy_from_slice(&g);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelDims};

    fn params64(d: usize, k: usize, h: usize, seed: u64) -> ModelParams<f64> {
        init_params(ModelDims::new(d, k, h).unwrap(), seed).unwrap().cast()
    }

    fn features(b: usize, t: usize, d: usize, seed: u64) -> RealArray<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RealArray::from_fn(&[b, t, d], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_fusion_is_identity() {
        let mut p = params64(6, 3, 4, 1);
        p.fusion.weight.fill(0.0);
        p.fusion.bias.fill(0.0);
        let f = features(2, 3, 6, 9);
        let out = pil_forward(&f, &p.prototypes, &p.fusion).unwrap();
        assert_eq!(out.enhanced, f);
    }

    #[test]
    fn aligned_feature_attends_to_its_prototype() {
        let mut p = params64(8, 4, 4, 3);
        p.prototypes.tau_p = 0.01;
        let target = 2;
        let key = p.prototypes.keys.row(target).to_vec();
        let f = RealArray::new(vec![1, 1, 8], key.iter().map(|x| x * 3.0).collect()).unwrap();
        let mut fusion = p.fusion.clone();
        fusion.weight = RealArray::from_fn(&[8, 8], |i| if i % 9 == 0 { 1.0 } else { 0.0 });
        fusion.bias.fill(0.0);
        let out = pil_forward(&f, &p.prototypes, &fusion).unwrap();
        let attn = out.attention.row(0);
        // cosine similarity of the other keys to key 2 stays well below 1, so
        // the tempered softmax collapses onto it
        assert!((attn[target] - 1.0).abs() < 1e-4, "{attn:?}");
        let context: Vec<f64> = out
            .enhanced
            .row(0)
            .iter()
            .zip(f.row(0))
            .map(|(e, x)| e - x)
            .collect();
        for (c, v) in context.iter().zip(p.prototypes.values.row(target)) {
            assert!((c - v).abs() < 1e-4);
        }
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let mut p = params64(5, 4, 3, 2);
        let first = p.prototypes.keys.row(0).to_vec();
        for k in 1..4 {
            p.prototypes.keys.row_mut(k).copy_from_slice(&first);
        }
        let out = pil_forward(&features(2, 4, 5, 1), &p.prototypes, &p.fusion).unwrap();
        assert!(out.attention.as_slice().iter().all(|&a| (a - 0.25).abs() < 1e-12));
    }

    #[test]
    fn zero_feature_gets_uniform_attention() {
        let p = params64(5, 5, 3, 2);
        let f = RealArray::zeros(&[1, 1, 5]);
        let out = pil_forward(&f, &p.prototypes, &p.fusion).unwrap();
        assert!(out.attention.as_slice().iter().all(|&a| (a - 0.2).abs() < 1e-12));
        assert!(out.enhanced.is_finite());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = params64(5, 2, 3, 2);
        let f = RealArray::<f64>::zeros(&[1, 2, 4]);
        assert!(matches!(pil_forward(&f, &p.prototypes, &p.fusion), Err(Error::Shape { .. })));
        assert!(score_instances(&f, &p.classifier).is_err());
    }

    #[test]
    fn zero_classifier_scores_half() {
        let mut p = params64(4, 2, 3, 5);
        for b in [ParamBlock::HiddenWeight, ParamBlock::HiddenBias, ParamBlock::OutputWeight, ParamBlock::OutputBias] {
            p.blocks_mut()[b as usize].fill(0.0);
        }
        let s = score_instances(&features(2, 3, 4, 0), &p.classifier).unwrap();
        assert_eq!(s.shape(), &[2, 3, 1]);
        assert!(s.as_slice().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn output_bias_is_monotone() {
        let p = params64(4, 2, 6, 5);
        let f = features(1, 5, 4, 3);
        let lo = score_instances(&f, &p.classifier).unwrap();
        let mut head = p.classifier.clone();
        head.output_bias.as_mut_slice()[0] += 0.25;
        let hi = score_instances(&f, &head).unwrap();
        for (a, b) in lo.as_slice().iter().zip(hi.as_slice()) {
            assert!(b > a && *a > 0.0 && *b < 1.0);
        }
    }

    #[test]
    fn forward_skips_padding_and_matches_composed_ops() {
        let p = params64(6, 3, 5, 4);
        let f = features(2, 4, 6, 8);
        let pass = forward(&p, &f, &[4, 2], true).unwrap();
        let pil = pil_forward(&f, &p.prototypes, &p.fusion).unwrap();
        let scores = score_instances(&pil.enhanced, &p.classifier).unwrap();
        for r in [0, 1, 2, 3, 4, 5] {
            for (a, b) in pass.enhanced.row(r).iter().zip(pil.enhanced.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((sigmoid(pass.logits.as_slice()[r]) - scores.as_slice()[r]).abs() < 1e-12);
        }
        assert!(pass.enhanced.row(6).iter().all(|&x| x == 0.0));
        assert_eq!(pass.logits.as_slice()[7], 0.0);
    }

    #[test]
    fn pil_off_passes_features_through() {
        let p = params64(6, 3, 5, 4);
        let f = features(1, 3, 6, 8);
        let pass = forward(&p, &f, &[3], false).unwrap();
        assert_eq!(pass.enhanced, f);
    }
}
