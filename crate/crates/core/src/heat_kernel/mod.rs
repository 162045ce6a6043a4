//! Guiding functions `g(t, x) = κ(T − t, x, x_T)` built from heat kernels.

pub mod hyperbolic;
pub mod torus;

pub use hyperbolic::{
    hyp_grad_log_kernel, hyp_log_kernel, hyp_log_kernel_quadrature, HypKernelMode,
    HyperbolicEstimator,
};
pub use torus::{torus_grad_log_kernel, torus_log_kernel};

use crate::geometry::Chart;
use crate::{Error, Result, Vector};

/// Which heat kernel a [`GuidingFunction`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidingBackend {
    /// Flat-torus image sum truncated to `{−K, …, K}²`.
    TorusSeries { truncation: usize },
    /// Hyperbolic kernel via the importance sampler with `samples` frozen
    /// draws. With `quadrature_fallback`, values and gradients fall back to
    /// adaptive quadrature whenever the estimator fails.
    HyperbolicMc {
        samples: usize,
        seed: u64,
        quadrature_fallback: bool,
    },
    /// Hyperbolic kernel by adaptive quadrature, gradient by central
    /// differences in the distance. Deterministic reference for the sampler.
    HyperbolicQuadrature,
}

#[derive(Debug, Clone)]
enum Evaluator {
    Torus {
        truncation: usize,
    },
    Hyperbolic {
        estimator: HyperbolicEstimator,
        fallback: bool,
    },
    HyperbolicQuadrature,
}

/// `g(t, x) = κ(T − t, x, x_T)` for a fixed target and horizon. Immutable
/// once built; Monte Carlo draws are frozen at construction.
#[derive(Debug, Clone)]
pub struct GuidingFunction {
    chart: Chart,
    target: Vector,
    horizon: f64,
    backend: GuidingBackend,
    evaluator: Evaluator,
}

impl GuidingFunction {
    pub fn new(
        chart: Chart,
        target: Vector,
        horizon: f64,
        backend: GuidingBackend,
    ) -> Result<Self> {
        chart.check(&target)?;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let evaluator = match (chart, backend) {
            (Chart::FlatTorus, GuidingBackend::TorusSeries { truncation }) => {
                if truncation == 0 {
                    return Err(Error::Config("torus truncation must be at least 1".into()));
                }
                Evaluator::Torus { truncation }
            }
            (
                Chart::PoincareDisk,
                GuidingBackend::HyperbolicMc {
                    samples,
                    seed,
                    quadrature_fallback,
                },
            ) => Evaluator::Hyperbolic {
                estimator: HyperbolicEstimator::new(samples, seed)?,
                fallback: quadrature_fallback,
            },
            (Chart::PoincareDisk, GuidingBackend::HyperbolicQuadrature) => {
                Evaluator::HyperbolicQuadrature
            }
            (chart, backend) => {
                return Err(Error::Config(format!(
                    "guiding backend {backend:?} does not apply to chart {}",
                    chart.name()
                )))
            }
        };
        Ok(Self {
            chart,
            target: chart.canonicalize(&target),
            horizon,
            backend,
            evaluator,
        })
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn target(&self) -> &Vector {
        &self.target
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn backend(&self) -> GuidingBackend {
        self.backend
    }

    fn elapsed(&self, t: f64) -> Result<f64> {
        if !(t < self.horizon) || !t.is_finite() {
            return Err(Error::Domain(format!(
                "guiding function evaluated at t = {t}, horizon is {}",
                self.horizon
            )));
        }
        Ok(self.horizon - t)
    }

    /// `ln g(t, x)`.
    pub fn log_g(&self, t: f64, x: &Vector) -> Result<f64> {
        let elapsed = self.elapsed(t)?;
        match &self.evaluator {
            Evaluator::Torus { truncation } => {
                torus_log_kernel(elapsed, x, &self.target, *truncation)
            }
            Evaluator::Hyperbolic {
                estimator,
                fallback,
            } => {
                let rho = self.chart.dist(x, &self.target)?;
                match estimator.log_kernel(elapsed, rho) {
                    Err(Error::Numeric(_)) if *fallback => hyp_log_kernel_quadrature(elapsed, rho),
                    other => other,
                }
            }
            Evaluator::HyperbolicQuadrature => {
                hyp_log_kernel_quadrature(elapsed, self.chart.dist(x, &self.target)?)
            }
        }
    }

    fn quadrature_grad(&self, elapsed: f64, x: &Vector) -> Result<Vector> {
        let rho = self.chart.dist(x, &self.target)?;
        if rho < hyperbolic::COINCIDENCE_RADIUS {
            return Ok(Vector::zeros(2));
        }
        let dr = hyperbolic::radial_log_derivative_quadrature(elapsed, rho)?;
        Ok(self.chart.grad_dist(x, &self.target)? * dr)
    }

    /// Coordinate gradient `∂ₓ ln g(t, x)`. The metric is not applied.
    pub fn grad_log_g(&self, t: f64, x: &Vector) -> Result<Vector> {
        let elapsed = self.elapsed(t)?;
        match &self.evaluator {
            Evaluator::Torus { truncation } => {
                torus_grad_log_kernel(elapsed, x, &self.target, *truncation)
            }
            Evaluator::Hyperbolic {
                estimator,
                fallback,
            } => match estimator.grad_log_kernel(elapsed.sqrt(), x, &self.target) {
                Err(Error::Numeric(_)) if *fallback => self.quadrature_grad(elapsed, x),
                other => other,
            },
            Evaluator::HyperbolicQuadrature => self.quadrature_grad(elapsed, x),
        }
    }
}
