//! Heat kernel of the hyperbolic plane (Poincaré disk model).
//!
//! With `ρ` the geodesic distance and elapsed time `τ²`,
//!
//! ```text
//! p = √2 e^{−τ²/8} / (2πτ²)^{3/2} ∫_ρ^∞ u e^{−u²/2τ²} / √(cosh u − cosh ρ) du.
//! ```
//!
//! This is the transition density of Brownian motion with generator `½Δ` on
//! the curvature −1 plane; the exponent `τ²/8` makes it integrate to one.
//!
//! Two evaluators are provided. [`hyp_log_kernel_quadrature`] integrates after
//! the substitution `u = ρ + v²`, which removes the inverse square root at the
//! lower endpoint. [`HyperbolicEstimator`] rewrites the integral as a Gaussian
//! expectation under the shifted proposal `u = μ + τz`, `μ = ρ + 2τ`, so that
//! every standard-normal draw with `z > −2` lands inside the integration
//! range. The draws are fixed when the estimator is built; the estimate is
//! then a smooth function of `ρ` and is differentiated with dual numbers.

use std::f64::consts::{LN_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dual::{log_sum_exp, Dual, Real};
use crate::geometry::Chart;
use crate::quadrature;
use crate::{Error, Result, Vector};

/// Default number of normal draws of the importance sampler.
pub const DEFAULT_SAMPLES: usize = 4096;

/// Distances below this are treated as coincident points (zero gradient).
pub const COINCIDENCE_RADIUS: f64 = 1e-8;

const QUADRATURE_REL_TOL: f64 = 1e-8;
const QUADRATURE_MAX_SEGMENTS: usize = 2000;
// e^{-TAIL_EXPONENT} relative to the integrand at the lower endpoint.
const TAIL_EXPONENT: f64 = 80.0;

/// How [`hyp_log_kernel`] evaluates the radial integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypKernelMode {
    Quadrature,
    MonteCarlo { samples: usize, seed: u64 },
}

fn check_time(tau2: f64) -> Result<()> {
    if !(tau2 > 0.0) || !tau2.is_finite() {
        return Err(Error::Domain(format!(
            "heat kernel needs elapsed time > 0, got {tau2}"
        )));
    }
    Ok(())
}

/// `ln(√2 e^{−τ²/8} / (2πτ²)^{3/2})`.
fn log_prefactor(tau2: f64) -> f64 {
    0.5 * LN_2 - 0.125 * tau2 - 1.5 * (2.0 * PI * tau2).ln()
}

/// Log-kernel as a function of the geodesic distance, by adaptive
/// Gauss–Kronrod quadrature to relative accuracy 1e−8.
pub fn hyp_log_kernel_quadrature(tau2: f64, rho: f64) -> Result<f64> {
    check_time(tau2)?;
    if !(rho >= 0.0) {
        return Err(Error::Domain(format!(
            "distance must be nonnegative, got {rho}"
        )));
    }
    // ∫_ρ^∞ … du = e^{−ρ²/2τ²} ∫_0^∞ 2v (ρ + v²) e^{−(2ρv² + v⁴)/2τ²}
    //                                     / √(2 sinh(ρ + v²/2) sinh(v²/2)) dv
    let integrand = |v: f64| {
        let v2 = v * v;
        let jac = if v == 0.0 {
            if rho == 0.0 {
                0.0
            } else {
                2.0 / rho.sinh().sqrt()
            }
        } else {
            2.0 * v / (2.0 * (rho + 0.5 * v2).sinh() * (0.5 * v2).sinh()).sqrt()
        };
        (rho + v2) * (-(2.0 * rho * v2 + v2 * v2) / (2.0 * tau2)).exp() * jac
    };
    let v_max = (-rho + (rho * rho + 2.0 * tau2 * TAIL_EXPONENT).sqrt()).sqrt();
    let integral = quadrature::integrate(
        integrand,
        0.0,
        v_max,
        QUADRATURE_REL_TOL,
        0.0,
        QUADRATURE_MAX_SEGMENTS,
    )
    .map_err(|e| {
        Error::Numeric(format!(
            "hyperbolic kernel at tau^2 = {tau2}, rho = {rho}: {e}"
        ))
    })?;
    if !(integral.value > 0.0) {
        return Err(Error::Numeric(format!(
            "hyperbolic kernel integral is {} at tau^2 = {tau2}, rho = {rho}",
            integral.value
        )));
    }
    Ok(log_prefactor(tau2) - rho * rho / (2.0 * tau2) + integral.value.ln())
}

/// Importance sampler for the hyperbolic heat kernel with frozen draws.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicEstimator {
    // retained draws, all > −2
    draws: Vec<f64>,
    total: usize,
    seed: u64,
}

impl HyperbolicEstimator {
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Config(
                "hyperbolic estimator needs at least one sample".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..samples)
            .map(|_| StandardNormal.sample(&mut rng))
            .filter(|&z: &f64| z > -2.0)
            .collect();
        Ok(Self {
            draws,
            total: samples,
            seed,
        })
    }

    pub fn samples(&self) -> usize {
        self.total
    }

    pub fn retained(&self) -> usize {
        self.draws.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_draws(&self) -> Result<()> {
        if self.draws.is_empty() {
            return Err(Error::Numeric(format!(
                "all {} importance samples were rejected (z <= -2)",
                self.total
            )));
        }
        Ok(())
    }

    /// `ln p` as a function of `ρ`, generic so it can carry a derivative.
    ///
    /// `ln ∫ = ln(√(2π) τ) − μ²/2τ² + ln((1/N) Σᵢ w(zᵢ))` with
    /// `w(z) = (μ + τz) e^{−μz/τ} / √(cosh(μ + τz) − cosh ρ)`.
    fn log_kernel_generic<S: Real>(&self, tau: f64, rho: S) -> S {
        let tau2 = tau * tau;
        let mu = rho + 2.0 * tau;
        let mut log_w = Vec::with_capacity(self.draws.len());
        for &z in &self.draws {
            let u = mu + tau * z;
            // cosh u − cosh ρ = 2 sinh((u + ρ)/2) sinh((u − ρ)/2), u − ρ = τ(z + 2)
            let half_gap = 0.5 * tau * (z + 2.0);
            let log_gap = (rho + half_gap).sinh().ln() + (LN_2 + half_gap.sinh().ln());
            log_w.push(u.ln() - mu * (z / tau) - log_gap * 0.5);
        }
        let log_mean = log_sum_exp(&log_w) - (self.total as f64).ln();
        let log_integral = mu * mu * (-0.5 / tau2) + (0.5 * (2.0 * PI).ln() + tau.ln());
        log_integral + log_mean + log_prefactor(tau2)
    }

    /// Monte Carlo estimate of `ln p` at elapsed time `τ²` and distance `ρ`.
    pub fn log_kernel(&self, tau2: f64, rho: f64) -> Result<f64> {
        check_time(tau2)?;
        self.check_draws()?;
        let v = self.log_kernel_generic(tau2.sqrt(), rho);
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite log-kernel estimate at tau^2 = {tau2}, rho = {rho}"
            )));
        }
        Ok(v)
    }

    /// `∂ ln p / ∂ρ` of the estimate, by forward-mode differentiation. This is
    /// `−μ/τ² + ∂_ρ ln Σ w`, i.e. the displayed gradient estimator divided by
    /// `∇ₓρ`.
    pub fn radial_log_derivative(&self, tau: f64, rho: f64) -> Result<f64> {
        check_time(tau * tau)?;
        self.check_draws()?;
        let d = self.log_kernel_generic(tau, Dual::<1>::variable(rho, 0));
        let g = d.grad[0];
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite radial derivative at tau = {tau}, rho = {rho}"
            )));
        }
        Ok(g)
    }

    /// Estimated `∇ₓ ln p(τ², x, y)` in disk coordinates (a coordinate
    /// gradient, not raised by the metric).
    pub fn grad_log_kernel(&self, tau: f64, x: &Vector, y: &Vector) -> Result<Vector> {
        let rho = Chart::PoincareDisk.dist(x, y)?;
        if rho < COINCIDENCE_RADIUS {
            return Ok(Vector::zeros(2));
        }
        let dr = self.radial_log_derivative(tau, rho)?;
        Ok(Chart::PoincareDisk.grad_dist(x, y)? * dr)
    }
}

/// `ln p(τ², x, y)` on the Poincaré disk.
pub fn hyp_log_kernel(tau2: f64, x: &Vector, y: &Vector, mode: HypKernelMode) -> Result<f64> {
    check_time(tau2)?;
    let rho = Chart::PoincareDisk.dist(x, y)?;
    match mode {
        HypKernelMode::Quadrature => hyp_log_kernel_quadrature(tau2, rho),
        HypKernelMode::MonteCarlo { samples, seed } => {
            HyperbolicEstimator::new(samples, seed)?.log_kernel(tau2, rho)
        }
    }
}

/// Importance-sampled `∇ₓ ln p` with `τ = √(elapsed time)`.
pub fn hyp_grad_log_kernel(
    tau: f64,
    x: &Vector,
    y: &Vector,
    samples: usize,
    seed: u64,
) -> Result<Vector> {
    HyperbolicEstimator::new(samples, seed)?.grad_log_kernel(tau, x, y)
}

/// `∂ ln p / ∂ρ` from central differences of the quadrature evaluator.
pub fn radial_log_derivative_quadrature(tau2: f64, rho: f64) -> Result<f64> {
    let h = 1e-5 * rho.max(tau2.sqrt());
    let lo = (rho - h).max(0.0);
    let hi = rho + h;
    Ok((hyp_log_kernel_quadrature(tau2, hi)? - hyp_log_kernel_quadrature(tau2, lo)?) / (hi - lo))
}
