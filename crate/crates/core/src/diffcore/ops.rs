use super::array::{Real, RealArray};
use crate::error::{Error, Result};

/// Floor applied to vector norms before dividing.
pub const NORM_EPS: f64 = 1e-12;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// `y += alpha * x`
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `[M×N] · [N×P] -> [M×P]`
pub fn matmul<T: Real>(a: &RealArray<T>, b: &RealArray<T>) -> Result<RealArray<T>> {
    let (m, n, p) = matmul_dims(a, b)?;
    let mut out = RealArray::zeros(&[m, p]);
    let (lhs, rhs) = (a.as_slice(), b.as_slice());
    let dst = out.as_mut_slice();
    for i in 0..m {
        let row = &mut dst[i * p..(i + 1) * p];
        for k in 0..n {
            axpy(lhs[i * n + k], &rhs[k * p..(k + 1) * p], row);
        }
    }
    Ok(out)
}

/// Gradients of a matrix product: `(dout · bᵀ, aᵀ · dout)`.
pub fn matmul_vjp<T: Real>(
    a: &RealArray<T>,
    b: &RealArray<T>,
    dout: &RealArray<T>,
) -> Result<(RealArray<T>, RealArray<T>)> {
    let (m, n, p) = matmul_dims(a, b)?;
    if dout.shape() != [m, p] {
        return Err(Error::Shape {
            op: "matmul_vjp",
            lhs: vec![m, p],
            rhs: dout.shape().to_vec(),
        });
    }
    let (lhs, rhs, g) = (a.as_slice(), b.as_slice(), dout.as_slice());
    let mut da = RealArray::zeros(&[m, n]);
    let mut db = RealArray::zeros(&[n, p]);
    {
        let da = da.as_mut_slice();
        let db = db.as_mut_slice();
        for i in 0..m {
            let g_row = &g[i * p..(i + 1) * p];
            for k in 0..n {
                da[i * n + k] = dot(g_row, &rhs[k * p..(k + 1) * p]);
                axpy(lhs[i * n + k], g_row, &mut db[k * p..(k + 1) * p]);
            }
        }
    }
    Ok((da, db))
}

fn matmul_dims<T: Real>(a: &RealArray<T>, b: &RealArray<T>) -> Result<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[m, n], &[n2, p]) if n == n2 => Ok((m, n, p)),
        _ => Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

/// `v / max(‖v‖, eps)`
pub fn l2_normalize<T: Real>(v: &[T], eps: T) -> Vec<T> {
    let scale = norm(v).max(eps);
    v.iter().map(|&x| x / scale).collect()
}

/// Pulls `dout` back through [`l2_normalize`] evaluated at `v`.
pub fn l2_normalize_vjp<T: Real>(v: &[T], dout: &[T], eps: T) -> Vec<T> {
    let n = norm(v);
    if n > eps {
        // d(v/|v|) = (I - u uᵀ) / |v|
        let u: Vec<T> = v.iter().map(|&x| x / n).collect();
        let proj = dot(&u, dout);
        dout.iter()
            .zip(&u)
            .map(|(&g, &ui)| (g - ui * proj) / n)
            .collect()
    } else {
        dout.iter().map(|&g| g / eps).collect()
    }
}

/// Softmax of `logits / tau` with max-subtraction.
pub fn softmax_temp<T: Real>(logits: &[T], tau: T) -> Result<Vec<T>> {
    if !(tau > T::zero()) {
        return Err(Error::config(format!("softmax temperature must be > 0, got {tau}")));
    }
    if logits.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut out: Vec<T> = logits.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let total: T = out.iter().copied().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// Pulls `dout` back through [`softmax_temp`] given its output `probs`.
pub fn softmax_temp_vjp<T: Real>(probs: &[T], dout: &[T], tau: T) -> Vec<T> {
    let inner = dot(probs, dout);
    probs
        .iter()
        .zip(dout)
        .map(|(&p, &g)| p * (g - inner) / tau)
        .collect()
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`
pub fn log_sigmoid<T: Real>(x: T) -> T {
    -softplus(-x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(rows: usize, cols: usize, v: &[f64]) -> RealArray<f64> {
        RealArray::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selector() {
        let eye = arr(2, 2, &[1., 0., 0., 1.]);
        let m = arr(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let sel = arr(1, 2, &[1., 0.]);
        let col = arr(2, 1, &[2., 5.]);
        assert_eq!(matmul(&sel, &col).unwrap().as_slice(), &[2.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = RealArray::<f64>::zeros(&[2, 3]);
        let b = RealArray::<f64>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_central_difference() {
        // d/da sum(a·b) at a=[[1,2]], b=[[3],[4]] is [[3,4]].
        let a = arr(1, 2, &[1., 2.]);
        let b = arr(2, 1, &[3., 4.]);
        let ones = arr(1, 1, &[1.]);
        let (da, db) = matmul_vjp(&a, &b, &ones).unwrap();
        let h = 1e-4;
        let f = |a: &RealArray<f64>| matmul(a, &b).unwrap().as_slice().iter().sum::<f64>();
        let mut fd = Vec::new();
        for i in 0..2 {
            let mut p = a.clone();
            p.as_mut_slice()[i] += h;
            let mut m = a.clone();
            m.as_mut_slice()[i] -= h;
            fd.push((f(&p) - f(&m)) / (2.0 * h));
        }
        for (g, n) in da.as_slice().iter().zip(&fd) {
            assert!((g - n).abs() < 1e-9);
        }
        assert!((fd[0] - 3.0).abs() < 1e-9 && (fd[1] - 4.0).abs() < 1e-9);
        assert_eq!(db.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn normalize_examples() {
        let out = l2_normalize(&[3.0f64, 4.0], 1e-12);
        assert!((out[0] - 0.6).abs() < 1e-12 && (out[1] - 0.8).abs() < 1e-12);
        assert_eq!(l2_normalize(&[0.0f64; 5], 1e-12), vec![0.0; 5]);
        let u = [0.0f64, 1.0, 0.0];
        assert_eq!(l2_normalize(&u, 1e-12), u.to_vec());
    }

    #[test]
    fn softmax_examples() {
        let eq = softmax_temp(&[0.3f64; 4], 0.7).unwrap();
        assert!(eq.iter().all(|&p| (p - 0.25).abs() < 1e-12));

        let sharp = softmax_temp(&[1.0f64, 0., 0., 0., 0.], 0.01).unwrap();
        assert!((sharp[0] - 1.0).abs() < 1e-6);

        let base = softmax_temp(&[0.1f64, -2.0, 0.5], 0.3).unwrap();
        let shifted = softmax_temp(&[100.1f64, 98.0, 100.5], 0.3).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        assert!(matches!(softmax_temp(&[1.0f64], 0.0), Err(Error::Config(_))));
        assert!(softmax_temp(&[1.0f64], -1.0).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        for &x in &[0.3f64, 2.0, 17.5, 40.0, 800.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-7);
        }
        let s = sigmoid(36.7f64);
        assert!(s.is_finite() && (1.0 - s).abs() < 1e-7);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(-800.0f32).is_finite());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((log_sigmoid(2.0f64) - sigmoid(2.0f64).ln()).abs() < 1e-14);
    }
}
