//! Stick-breaking map from `R^(K-1)` onto the interior of the K-simplex,
//! evaluated in log space.
//!
//! Coordinate `k` breaks off `z_k = sigmoid(y_k - ln(K-1-k))` of what remains,
//! so the origin maps to the uniform simplex point.

use crate::error::{Error, Result};

/// Numerically stable `ln(1 + exp(t))`.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `ln sigmoid(t)`.
#[inline]
pub(crate) fn log_sigmoid(t: f64) -> f64 {
    -softplus(-t)
}

#[inline]
fn offset(k: usize, size: usize) -> f64 {
    ((size - 1 - k) as f64).ln()
}

/// Writes `ln x` for the simplex point of `y` into `log_x` (length `y.len() + 1`)
/// and returns the log absolute Jacobian determinant of `y -> x[..K-1]`.
pub fn log_stick_breaking(y: &[f64], log_x: &mut [f64]) -> f64 {
    let size = log_x.len();
    debug_assert_eq!(y.len() + 1, size);
    let mut log_rem = 0.0;
    let mut log_jac = 0.0;
    for (k, &yk) in y.iter().enumerate() {
        let t = yk - offset(k, size);
        let lz = log_sigmoid(t);
        let l1mz = log_sigmoid(-t);
        log_x[k] = log_rem + lz;
        log_jac += lz + l1mz + log_rem;
        log_rem += l1mz;
    }
    log_x[size - 1] = log_rem;
    log_jac
}

/// Simplex point of `y`.
pub fn stick_breaking(y: &[f64]) -> Vec<f64> {
    let mut lx = vec![0.0; y.len() + 1];
    log_stick_breaking(y, &mut lx);
    lx.into_iter().map(f64::exp).collect()
}

/// Adds the gradient with respect to `y` of `sum_k adjoint[k] * ln x_k`
/// (plus the log Jacobian when `with_jacobian`) into `grad_y`.
pub fn log_stick_breaking_backprop(y: &[f64], adjoint: &[f64], with_jacobian: bool, grad_y: &mut [f64]) {
    let size = adjoint.len();
    let mut carried = adjoint[size - 1];
    for k in (0..y.len()).rev() {
        let z = crate::ordered::sigmoid(y[k] - offset(k, size));
        let mut g = adjoint[k] * (1.0 - z) - carried * z;
        carried += adjoint[k];
        if with_jacobian {
            g += 1.0 - 2.0 * z;
            // d/d(ln rem_k) of the ln rem_k term; rem_0 = 1 is constant.
            carried += 1.0;
        }
        grad_y[k] += g;
    }
}

/// Unconstrained coordinates of an interior simplex point.
pub fn stick_breaking_inverse(x: &[f64]) -> Result<Vec<f64>> {
    let size = x.len();
    if size == 0 {
        return Err(Error::Domain("empty simplex".into()));
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("simplex sums to {sum}")));
    }
    if let Some(i) = x.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("simplex entry {i} is not positive")));
    }
    let mut rem = 1.0;
    let mut y = Vec::with_capacity(size - 1);
    for (k, &xk) in x[..size - 1].iter().enumerate() {
        let z = (xk / rem).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        y.push(crate::ordered::logit(z) + offset(k, size));
        rem -= xk;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_uniform() {
        for k in 1..7 {
            let x = stick_breaking(&vec![0.0; k]);
            for v in &x {
                assert!((v - 1.0 / (k + 1) as f64).abs() < 1e-14);
            }
        }
        assert_eq!(stick_breaking(&[]), vec![1.0]);
    }

    #[test]
    fn inverse_round_trip() {
        let y = [0.3, -2.0, 1.4];
        let x = stick_breaking(&y);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let back = stick_breaking_inverse(&x).unwrap();
        for (a, b) in y.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn log_jacobian_matches_finite_difference_determinant() {
        let y = [0.7, -0.3, 0.1];
        let n = y.len();
        let mut lx = [0.0; 4];
        let lj = log_stick_breaking(&y, &mut lx);
        let h = 1e-6;
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            let (mut hi, mut lo) = (y, y);
            hi[j] += h;
            lo[j] -= h;
            let (a, b) = (stick_breaking(&hi), stick_breaking(&lo));
            for i in 0..n {
                jac[(i, j)] = (a[i] - b[i]) / (2.0 * h);
            }
        }
        let fd = jac.determinant().abs().ln();
        assert!((fd - lj).abs() < 1e-7, "{fd} vs {lj}");
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let y = [0.4, -1.3, 0.9];
        let w = [0.5, -2.0, 1.5, 0.25];
        for jac in [false, true] {
            let f = |y: &[f64]| {
                let mut lx = [0.0; 4];
                let lj = log_stick_breaking(y, &mut lx);
                lx.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + if jac { lj } else { 0.0 }
            };
            let mut g = [0.0; 3];
            log_stick_breaking_backprop(&y, &w, jac, &mut g);
            for j in 0..3 {
                let (mut hi, mut lo) = (y, y);
                hi[j] += 1e-6;
                lo[j] -= 1e-6;
                let fd = (f(&hi) - f(&lo)) / 2e-6;
                assert!((fd - g[j]).abs() < 1e-7, "jac={jac} {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn extreme_coordinates_stay_finite() {
        let mut lx = [0.0; 3];
        let lj = log_stick_breaking(&[800.0, -800.0], &mut lx);
        assert!(lx.iter().all(|v| v.is_finite()));
        assert!(lj.is_finite());
    }
}
