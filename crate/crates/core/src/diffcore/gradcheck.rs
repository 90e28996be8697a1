use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::{Real, RealArray};
use crate::error::{Error, Result};

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct GradSlot<T = f32> {
    pub name: String,
    pub value: RealArray<T>,
    pub grad: RealArray<T>,
    pub requires_grad: bool,
}

impl<T: Real> GradSlot<T> {
    pub fn new(name: impl Into<String>, value: RealArray<T>) -> Self {
        let grad = RealArray::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            requires_grad: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that two near-zero
    /// gradients are compared absolutely.
    pub abs_floor: f64,
    /// When set, at most this many coordinates per slot are checked, drawn
    /// with `seed`. Values below 200 are raised to 200.
    pub max_coords_per_slot: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_coords_per_slot: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub slot: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest relative errors first.
    pub worst: Vec<CoordCheck>,
    pub failures: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} coordinates, max rel err {:.3e}, {} failures",
            self.checked,
            self.max_rel_err,
            self.failures.len()
        )?;
        for c in self.failures.iter().chain(&self.worst).take(5) {
            write!(
                f,
                "; {}[{}] analytic {:.6e} numeric {:.6e} rel {:.3e}",
                c.slot, c.index, c.analytic, c.numeric, c.rel_err
            )?;
        }
        Ok(())
    }
}

/// Compares the gradients written by `loss` against central differences.
///
/// `loss` must return the scalar objective for the current slot values and
/// accumulate its gradient into each slot's `grad`; slots are zeroed before
/// every call. Returns the report on success and
/// [`Error::GradientCheck`] naming the offending coordinates otherwise.
pub fn check_gradients<F>(
    slots: &mut [GradSlot<f64>],
    cfg: &GradCheckConfig,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut [GradSlot<f64>]) -> f64,
{
    let mut eval = |slots: &mut [GradSlot<f64>]| {
        slots.iter_mut().for_each(GradSlot::zero_grad);
        loss(slots)
    };
    let base = eval(slots);
    if !base.is_finite() {
        return Err(Error::NonFinite("gradient check objective".into()));
    }
    let analytic: Vec<RealArray<f64>> = slots.iter().map(|s| s.grad.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut all = Vec::new();

    for s in 0..slots.len() {
        if !slots[s].requires_grad {
            continue;
        }
        let n = slots[s].value.len();
        let coords: Vec<usize> = match cfg.max_coords_per_slot {
            Some(cap) if n > cap.max(200) => {
                let mut idx = rand::seq::index::sample(&mut rng, n, cap.max(200)).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = slots[s].value.as_slice()[i];
            slots[s].value.as_mut_slice()[i] = orig + cfg.step;
            let plus = eval(slots);
            slots[s].value.as_mut_slice()[i] = orig - cfg.step;
            let minus = eval(slots);
            slots[s].value.as_mut_slice()[i] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[s].as_slice()[i];
            let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
            let rel_err = (a - numeric).abs() / denom;
            let check = CoordCheck {
                slot: slots[s].name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_err,
            };
            if !(rel_err <= cfg.tolerance) {
                report.failures.push(check.clone());
            }
            report.max_rel_err = report.max_rel_err.max(rel_err);
            report.checked += 1;
            all.push(check);
        }
    }
    // restore analytic gradients in the slots
    for (slot, g) in slots.iter_mut().zip(analytic) {
        slot.grad = g;
    }
    all.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    all.truncate(5);
    report.worst = all;
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::GradientCheck(report.to_string()))
    }
}
