//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use prodisc_core::data::{generate_synthetic, SynthConfig, SynthCorpus};
use prodisc_core::diffcore::RealArray;
use prodisc_core::model::{init_params, ModelDims, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct summation of the anchor/positive SupCon terms, straight from the
/// definition with plain exponentials (no log-sum-exp), averaged over anchors
/// that have a positive with a 1e-8 guard.
pub fn supcon_oracle(vectors: &[Vec<f64>], labels: &[i8], tau: f64) -> f64 {
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let sim = |i: usize, j: usize| -> f64 { unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum() };
    let n = unit.len();
    let (mut total, mut valid) = (0.0, 0.0);
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        valid += 1.0;
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (sim(i, a) / tau).exp()).sum();
        let term: f64 = positives
            .iter()
            .map(|&p| -((sim(i, p) / tau).exp() / denom).ln())
            .sum::<f64>()
            / positives.len() as f64;
        total += term;
    }
    total / (valid + 1e-8)
}

/// Mean over all (positive, negative) pairs of 1 / 0.5 / 0.
pub fn pair_counting_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut acc, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            acc += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / pairs
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_array(shape: &[usize], rng: &mut ChaCha8Rng) -> RealArray<f64> {
    RealArray::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn params64(d: usize, k: usize, h: usize, seed: u64) -> ModelParams<f64> {
    init_params(ModelDims::new(d, k, h).unwrap(), seed).unwrap().cast()
}

/// Small corpus that trains in well under a second.
pub fn small_corpus(seed: u64) -> SynthCorpus {
    generate_synthetic(&SynthConfig {
        d: 16,
        train_bags_per_class: 12,
        test_bags_per_class: 6,
        t_min: 8,
        t_max: 16,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Argmax/argmin per bag by a plain scan, lowest index on ties, bag skipped
/// when it has one instance or the two coincide.
pub fn brute_force_extremes(scores: &[Vec<f64>]) -> Vec<(usize, usize, i8)> {
    let mut out = Vec::new();
    for (b, s) in scores.iter().enumerate() {
        if s.len() < 2 {
            continue;
        }
        let mut hi = 0;
        let mut lo = 0;
        for i in 1..s.len() {
            if s[i] > s[hi] {
                hi = i;
            }
            if s[i] < s[lo] {
                lo = i;
            }
        }
        if hi != lo {
            out.push((b, hi, 1));
            out.push((b, lo, -1));
        }
    }
    out
}

/// Runs `batches` random batches through scoring, selection and the
/// contrastive loss and returns the largest deviation from the oracle.
pub fn pide_sweep(batches: usize, seed: u64) -> f64 {
    use prodisc_core::losses::{pide_loss, select_extremes, InstanceScores};

    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let b = r.random_range(2..=8);
        let t_max = 40;
        let d = r.random_range(2..=16);
        let tau = [0.05, 0.1, 0.2, 0.5, 1.0][r.random_range(0..5)];
        let lengths: Vec<usize> = (0..b).map(|_| r.random_range(2..=t_max)).collect();
        // Coarse scores so that ties happen regularly.
        let mut scores = RealArray::<f64>::zeros(&[b, t_max, 1]);
        let mut per_bag = Vec::new();
        for (bi, &len) in lengths.iter().enumerate() {
            let v: Vec<f64> = (0..len).map(|_| r.random_range(0..20) as f64 / 20.0).collect();
            scores.as_mut_slice()[bi * t_max..bi * t_max + len].copy_from_slice(&v);
            per_bag.push(v);
        }
        let feats = uniform_array(&[b, t_max, d], &mut r);

        let inst = InstanceScores::from_scores(scores, lengths).unwrap();
        let sel = select_extremes(&inst, 1).unwrap();
        let expected_sel = brute_force_extremes(&per_bag);
        let got_sel: Vec<(usize, usize, i8)> =
            sel.entries.iter().map(|s| (s.bag, s.index, s.label.sign())).collect();
        assert_eq!(got_sel, expected_sel);

        let got = pide_loss(&feats, &sel, tau).unwrap().value;
        let vectors: Vec<Vec<f64>> = expected_sel
            .iter()
            .map(|&(bi, i, _)| feats.as_slice()[(bi * t_max + i) * d..(bi * t_max + i + 1) * d].to_vec())
            .collect();
        let labels: Vec<i8> = expected_sel.iter().map(|e| e.2).collect();
        let want = if vectors.len() < 2 { 0.0 } else { supcon_oracle(&vectors, &labels, tau) };
        worst = worst.max((got - want).abs());
    }
    worst
}

/// Largest |compute_auc − pair counting| over `trials` random inputs of up to
/// `max_n` points, scores drawn from a small grid to force ties.
pub fn auc_sweep(trials: usize, max_n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let n = if trial == 0 { max_n } else { r.random_range(2..=max_n) };
        let grid = r.random_range(2..=1000);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..grid) as f64 / grid as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let got = prodisc_core::compute_auc(&scores, &labels).unwrap();
        worst = worst.max((got - pair_counting_auc(&scores, &labels)).abs());
    }
    worst
}
