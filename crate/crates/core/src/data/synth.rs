use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FeatureBag;
use crate::diffcore::{axpy, dot, norm, RealArray};
use crate::error::{Error, Result};

/// Parameters of the synthetic MIL corpus.
///
/// Normal instances are a normal-cluster center plus isotropic Gaussian noise
/// whose root-mean-square norm is `sigma` (per-coordinate std `sigma / √d`). Cluster
/// centers have entries drawn from `N(0, 1/d)`, so their norm is close to 1.
/// An anomalous instance is a normal sample shifted by `delta` along a unit
/// direction orthogonal to every center.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub train_bags_per_class: usize,
    pub test_bags_per_class: usize,
    pub t_min: usize,
    pub t_max: usize,
    /// Fraction of instances that are anomalous in an abnormal bag.
    pub rho: f64,
    pub normal_clusters: usize,
    pub delta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 64,
            train_bags_per_class: 200,
            test_bags_per_class: 50,
            t_min: 40,
            t_max: 80,
            rho: 0.1,
            normal_clusters: 4,
            delta: 1.0,
            sigma: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.d < 2 {
            return fail(format!("d must be >= 2, got {}", self.d));
        }
        if self.normal_clusters == 0 || self.normal_clusters >= self.d {
            return fail(format!(
                "normal_clusters must be in [1, d), got {}",
                self.normal_clusters
            ));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return fail(format!("invalid length range [{}, {}]", self.t_min, self.t_max));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return fail(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return fail(format!("delta must be >= 0, got {}", self.delta));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.train_bags_per_class + self.test_bags_per_class == 0 {
            return fail("corpus would be empty".into());
        }
        Ok(())
    }

    /// Anomalous instances in an abnormal bag of `t` instances: `⌈ρ·t⌉`.
    pub fn anomalies_in(&self, t: usize) -> usize {
        // guard against 0.1 * 70 = 7.000000000000001
        let n = (self.rho * t as f64 - 1e-9).ceil() as usize;
        n.clamp(1, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<FeatureBag>,
    pub test: Vec<FeatureBag>,
}

/// Deterministic synthetic corpus. Abnormal bags hold one contiguous run of
/// anomalous instances at a random offset; normal bags hold none.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let d = cfg.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0f64, 1.0).expect("valid normal");

    let centers: Vec<Vec<f64>> = (0..cfg.normal_clusters)
        .map(|_| (0..d).map(|_| unit.sample(&mut rng) / (d as f64).sqrt()).collect())
        .collect();
    let direction = held_out_direction(&centers, d, &mut rng, &unit);
    let noise_std = cfg.sigma / (d as f64).sqrt();

    let make_bag = |id: String, abnormal: bool, rng: &mut ChaCha8Rng| -> Result<FeatureBag> {
        let t = rng.random_range(cfg.t_min..=cfg.t_max);
        let center = &centers[rng.random_range(0..centers.len())];
        let (start, run) = if abnormal {
            let run = cfg.anomalies_in(t);
            (rng.random_range(0..=t - run), run)
        } else {
            (0, 0)
        };
        let mut data = Vec::with_capacity(t * d);
        let mut labels = vec![0u8; t];
        for (i, label) in labels.iter_mut().enumerate() {
            let mut x: Vec<f64> = center
                .iter()
                .map(|&c| c + noise_std * unit.sample(rng))
                .collect();
            if abnormal && (start..start + run).contains(&i) {
                axpy(cfg.delta, &direction, &mut x);
                *label = 1;
            }
            data.extend(x.into_iter().map(|v| v as f32));
        }
        FeatureBag::new(id, RealArray::new(vec![t, d], data)?, abnormal as u8, Some(labels))
    };

    let split = |name: &str, per_class: usize, rng: &mut ChaCha8Rng| -> Result<Vec<FeatureBag>> {
        let mut bags = Vec::with_capacity(2 * per_class);
        for (class, abnormal) in [("normal", false), ("abnormal", true)] {
            for i in 0..per_class {
                bags.push(make_bag(format!("{name}_{class}_{i:04}"), abnormal, rng)?);
            }
        }
        Ok(bags)
    };
    let train = split("train", cfg.train_bags_per_class, &mut rng)?;
    let test = split("test", cfg.test_bags_per_class, &mut rng)?;
    Ok(SynthCorpus { train, test })
}

/// Random unit vector orthogonal to all `centers` (Gram-Schmidt).
fn held_out_direction(
    centers: &[Vec<f64>],
    d: usize,
    rng: &mut ChaCha8Rng,
    unit: &Normal<f64>,
) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in centers {
        let mut v = c.clone();
        for b in &basis {
            let p = dot(&v, b);
            axpy(-p, b, &mut v);
        }
        let n = norm(&v);
        if n > 1e-9 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    loop {
        let mut u: Vec<f64> = (0..d).map(|_| unit.sample(rng)).collect();
        for b in &basis {
            let p = dot(&u, b);
            axpy(-p, b, &mut u);
        }
        let n = norm(&u);
        if n > 1e-6 {
            u.iter_mut().for_each(|x| *x /= n);
            return u;
        }
    }
}
