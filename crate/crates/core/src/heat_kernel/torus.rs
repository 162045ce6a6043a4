//! Heat kernel of the flat torus `ℝ² / 2πℤ²` as a truncated image sum.
//!
//! `κ(t, x, y) = (2πt)⁻¹ Σ_{k,ℓ} exp(−(x₁ − y₁ − 2kπ)²/2t − (x₂ − y₂ − 2ℓπ)²/2t)`
//! with `k, ℓ ∈ {−K, …, K}`. The double sum factorises into a product of one
//! sum per coordinate, each of which is evaluated in log-sum-exp form.

use std::f64::consts::{PI, TAU};

use crate::dual::{log_sum_exp, Real};
use crate::{Error, Result, Vector};

/// Default number of images on either side of the origin.
pub const DEFAULT_TRUNCATION: usize = 10;

fn check(t: f64, x: &Vector, y: &Vector, truncation: usize) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "heat kernel needs elapsed time > 0, got {t}"
        )));
    }
    if truncation == 0 {
        return Err(Error::Config(
            "torus kernel truncation must be at least 1".into(),
        ));
    }
    if x.len() != 2 || y.len() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: if x.len() != 2 { x.len() } else { y.len() },
        });
    }
    Ok(())
}

/// `log κ(t, x, y)` for any scalar type, so that it can be differentiated with
/// dual numbers.
pub fn log_kernel_generic<S: Real>(t: f64, x: &[S; 2], y: &[f64; 2], truncation: usize) -> S {
    let k = truncation as i64;
    let mut terms = Vec::with_capacity(2 * truncation + 1);
    let mut total = S::constant(-(2.0 * PI * t).ln());
    for c in 0..2 {
        terms.clear();
        for image in -k..=k {
            let r = x[c] - y[c] - TAU * image as f64;
            terms.push(r * r * (-0.5 / t));
        }
        total += log_sum_exp(&terms);
    }
    total
}

/// Logarithm of the truncated torus heat kernel.
pub fn torus_log_kernel(t: f64, x: &Vector, y: &Vector, truncation: usize) -> Result<f64> {
    check(t, x, y, truncation)?;
    Ok(log_kernel_generic(
        t,
        &[x[0], x[1]],
        &[y[0], y[1]],
        truncation,
    ))
}

/// Gradient in `x` of [`torus_log_kernel`], differentiated term by term:
/// each coordinate contributes the softmax-weighted mean of `−r_k / t` over
/// the images `r_k = xᵢ − yᵢ − 2kπ`.
pub fn torus_grad_log_kernel(t: f64, x: &Vector, y: &Vector, truncation: usize) -> Result<Vector> {
    check(t, x, y, truncation)?;
    let k = truncation as i64;
    let mut grad = Vector::zeros(2);
    for c in 0..2 {
        let d = x[c] - y[c];
        let r = |image: i64| d - TAU * image as f64;
        let max = (-k..=k)
            .map(|i| -r(i) * r(i) / (2.0 * t))
            .fold(f64::NEG_INFINITY, f64::max);
        let w = |ri: f64| (-ri * ri / (2.0 * t) - max).exp();
        // images ±i are summed in pairs so the result is exactly odd in d
        let (mut num, mut den) = (w(d) * d, w(d));
        for image in 1..=k {
            let (rp, rm) = (r(image), r(-image));
            num += w(rp) * rp + w(rm) * rm;
            den += w(rp) + w(rm);
        }
        grad[c] = -num / (den * t);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Dual;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn small_time_is_dominated_by_the_central_image() {
        let x = v(1.0, 2.0);
        let lk = torus_log_kernel(0.01, &x, &x, 10).unwrap();
        assert!((lk - (1.0 / (2.0 * PI * 0.01)).ln()).abs() < 1e-12);
    }

    // Poisson summation: κ = (4π²)⁻¹ Πᵢ (1 + 2 Σₙ e^{−n²t/2} cos(n dᵢ))
    fn fourier_kernel(t: f64, x: &Vector, y: &Vector) -> f64 {
        (0..2)
            .map(|c| {
                let d = x[c] - y[c];
                1.0 + 2.0
                    * (1..60)
                        .map(|n| (-(n * n) as f64 * t / 2.0).exp() * (n as f64 * d).cos())
                        .sum::<f64>()
            })
            .product::<f64>()
            / (4.0 * PI * PI)
    }

    #[test]
    fn matches_fourier_series() {
        let (x, y) = (v(0.3, 5.0), v(4.0, 1.0));
        for t in [0.5, 2.0, 10.0] {
            let k = torus_log_kernel(t, &x, &y, 10).unwrap().exp();
            let f = fourier_kernel(t, &x, &y);
            assert!((k - f).abs() < 1e-12 * f, "t = {t}: {k} vs {f}");
        }
    }

    #[test]
    fn large_time_is_uniform() {
        // the spectral gap of ½Δ is ½, so uniformity to 1e−6 needs t ≳ 30
        let k = torus_log_kernel(40.0, &v(0.3, 5.0), &v(4.0, 1.0), 10)
            .unwrap()
            .exp();
        assert!((k - 1.0 / (4.0 * PI * PI)).abs() < 1e-6);
        assert!((k - 0.025_330_3).abs() < 1e-6);
        let k10 = torus_log_kernel(10.0, &v(0.3, 5.0), &v(4.0, 1.0), 10)
            .unwrap()
            .exp();
        assert!((k10 - 1.0 / (4.0 * PI * PI)).abs() > 1e-4);
    }

    #[test]
    fn truncation_has_converged() {
        let (x, y) = (v(0.0, 0.0), v(1.0, 2.0));
        let a = torus_log_kernel(0.5, &x, &y, 10).unwrap();
        let b = torus_log_kernel(0.5, &x, &y, 20).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_time() {
        let x = v(0.0, 0.0);
        assert!(matches!(
            torus_log_kernel(0.0, &x, &x, 10),
            Err(Error::Domain(_))
        ));
        assert!(torus_grad_log_kernel(-1.0, &x, &x, 10).is_err());
    }

    #[test]
    fn gradient_vanishes_at_coincidence() {
        let x = v(2.5, 0.4);
        for t in [0.01, 0.3, 4.0] {
            assert!(torus_grad_log_kernel(t, &x, &x, 10).unwrap().amax() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = (v(0.0, 0.0), v(1.0, 2.0));
        let g = torus_grad_log_kernel(0.5, &x, &y, 10).unwrap();
        let h = 1e-5;
        for c in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let fd = (torus_log_kernel(0.5, &xp, &y, 10).unwrap()
                - torus_log_kernel(0.5, &xm, &y, 10).unwrap())
                / (2.0 * h);
            assert!((g[c] - fd).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn small_time_gradient_points_at_target() {
        let x = v(1.0, 1.0);
        let y = v(1.3, 1.0);
        let g = torus_grad_log_kernel(0.01, &x, &y, 10).unwrap();
        assert!((g[0] - 30.0).abs() < 30.0 * 1e-6);
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_equals_dual_gradient() {
        for (t, x, y) in [
            (0.5, v(0.0, 0.0), v(1.0, 2.0)),
            (2.0, v(6.0, 3.0), v(0.1, 0.2)),
        ] {
            let g = torus_grad_log_kernel(t, &x, &y, 10).unwrap();
            let d = log_kernel_generic(t, &Dual::<2>::variables(&[x[0], x[1]]), &[y[0], y[1]], 10);
            for c in 0..2 {
                assert!((g[c] - d.grad[c]).abs() <= 1e-12 * g[c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn kernel_is_symmetric() {
        let (x, y) = (v(0.2, 5.9), v(3.3, 1.1));
        let a = torus_log_kernel(0.7, &x, &y, 10).unwrap();
        let b = torus_log_kernel(0.7, &y, &x, 10).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
