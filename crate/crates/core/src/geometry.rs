//! Coordinate charts, metrics, Christoffel symbols and geodesic distances.
//!
//! Two charts are provided: the flat torus `[0, 2π)²` with the Euclidean
//! metric, and the Poincaré disk with the conformal metric
//! `4|dz|² / (1 − |z|²)²`. The torus also carries its standard embedding in ℝ³
//! as a [`Diffeomorphism`].

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;

use crate::dual::{Dual, Real};
use crate::{Error, Matrix, Result, Vector};

/// Points with `|x| > 1 − DISK_GUARD` are rejected by the disk chart.
pub const DISK_GUARD: f64 = 1e-9;

/// A global coordinate chart of a two-dimensional model manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Chart {
    /// `ℝ² / 2πℤ²` with the Euclidean metric.
    FlatTorus,
    /// Unit disk with the hyperbolic metric of curvature −1.
    PoincareDisk,
}

/// Christoffel symbols `Γ^k_{ij}` stored densely as `[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.data[(k * self.dim + i) * self.dim + j] = value;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&g| g == 0.0)
    }
}

impl Chart {
    pub fn dim(&self) -> usize {
        2
    }

    pub fn name(&self) -> &'static str {
        match self {
            Chart::FlatTorus => "flat_torus",
            Chart::PoincareDisk => "poincare_disk",
        }
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Checks that `x` is an admissible coordinate vector for the chart.
    pub fn check(&self, x: &Vector) -> Result<()> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite coordinates {:?}",
                x.as_slice()
            )));
        }
        if let Chart::PoincareDisk = self {
            let r = x.norm();
            if r > 1.0 - DISK_GUARD {
                return Err(Error::Domain(format!(
                    "point with |x| = {r} lies outside the Poincaré disk guard 1 - {DISK_GUARD:e}"
                )));
            }
        }
        Ok(())
    }

    /// Maps coordinates to their canonical representative: `[0, 2π)` per
    /// coordinate on the torus, unchanged on the disk.
    pub fn canonicalize(&self, x: &Vector) -> Vector {
        match self {
            Chart::FlatTorus => x.map(wrap_angle),
            Chart::PoincareDisk => x.clone(),
        }
    }

    /// Coordinate displacement from `from` to `to`. On the torus the
    /// representative in `(−π, π]` per coordinate is chosen.
    pub fn displacement(&self, from: &Vector, to: &Vector) -> Vector {
        let diff = to - from;
        match self {
            Chart::FlatTorus => diff.map(minimal_angle),
            Chart::PoincareDisk => diff,
        }
    }

    /// Conformal factor `λ(x)` with `G(x) = λ(x)² I`.
    fn conformal_factor(&self, x: &Vector) -> f64 {
        match self {
            Chart::FlatTorus => 1.0,
            Chart::PoincareDisk => 2.0 / (1.0 - x.norm_squared()),
        }
    }

    /// Squared conformal factor, i.e. the single diagonal entry of the metric.
    pub fn metric_scale(&self, x: &Vector) -> Result<f64> {
        self.check(x)?;
        Ok(self.conformal_factor(x).powi(2))
    }

    /// Riemannian metric `G(x)`.
    pub fn metric(&self, x: &Vector) -> Result<Matrix> {
        let s = self.metric_scale(x)?;
        Ok(Matrix::identity(self.dim(), self.dim()) * s)
    }

    pub fn inverse_metric(&self, x: &Vector) -> Result<Matrix> {
        let s = self.metric_scale(x)?;
        Ok(Matrix::identity(self.dim(), self.dim()) / s)
    }

    /// `⟨v, w⟩_x`.
    pub fn inner(&self, x: &Vector, v: &Vector, w: &Vector) -> Result<f64> {
        Ok(self.metric_scale(x)? * v.dot(w))
    }

    /// Christoffel symbols of the Levi-Civita connection.
    ///
    /// For a conformal metric `e^{2φ} δ` they read
    /// `Γ^k_{ij} = δ_{ik} ∂_j φ + δ_{jk} ∂_i φ − δ_{ij} ∂_k φ`; on the disk
    /// `∂_i φ = 2 x_i / (1 − |x|²)`.
    pub fn christoffel(&self, x: &Vector) -> Result<Christoffel> {
        self.check(x)?;
        let d = self.dim();
        let mut gamma = Christoffel::zeros(d);
        if let Chart::PoincareDisk = self {
            let denom = 1.0 - x.norm_squared();
            let dphi: Vec<f64> = x.iter().map(|xi| 2.0 * xi / denom).collect();
            for k in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        let mut v = 0.0;
                        if i == k {
                            v += dphi[j];
                        }
                        if j == k {
                            v += dphi[i];
                        }
                        if i == j {
                            v -= dphi[k];
                        }
                        gamma.set(k, i, j, v);
                    }
                }
            }
        }
        Ok(gamma)
    }

    /// Geodesic distance.
    pub fn dist(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        match self {
            Chart::FlatTorus => Ok(self.displacement(x, y).norm()),
            Chart::PoincareDisk => {
                let [a0, a1] = [x[0], x[1]];
                Ok(disk_distance(&[a0, a1], &[y[0], y[1]]))
            }
        }
    }

    /// Gradient of `x ↦ dist(x, y)` in chart coordinates. Undefined at
    /// `x = y`, where zero is returned.
    pub fn grad_dist(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        self.check(x)?;
        self.check(y)?;
        match self {
            Chart::FlatTorus => {
                // displacement from y to x
                let v = self.displacement(y, x);
                let n = v.norm();
                Ok(if n == 0.0 { v } else { v / n })
            }
            Chart::PoincareDisk => {
                let d = disk_distance(&Dual::<2>::variables(&[x[0], x[1]]), &[y[0], y[1]]);
                Ok(Vector::from_row_slice(&d.grad))
            }
        }
    }
}

/// Hyperbolic distance on the Poincaré disk,
/// `arcosh(1 + 2|x − y|² / ((1 − |x|²)(1 − |y|²)))`, written with `ln_1p` to
/// stay accurate for nearby points.
pub fn disk_distance<S: Real>(x: &[S; 2], y: &[f64; 2]) -> S {
    let dx = x[0] - y[0];
    let dy = x[1] - y[1];
    let diff2 = dx * dx + dy * dy;
    let nx = (x[0] * x[0] + x[1] * x[1]) * -1.0 + 1.0;
    let ny = 1.0 - (y[0] * y[0] + y[1] * y[1]);
    let delta = diff2 * 2.0 / (nx * ny);
    if delta.value() == 0.0 {
        // arcosh is not differentiable at 1
        return delta * 0.0;
    }
    // arcosh(1 + δ) = ln(1 + δ + √(δ(2 + δ)))
    (delta + (delta * (delta + 2.0)).sqrt()).ln_1p()
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Representative of an angle difference in `(−π, π]`.
pub fn minimal_angle(a: f64) -> f64 {
    let w = wrap_angle(a);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// A diffeomorphism from a two-dimensional chart onto an embedded surface.
pub trait Diffeomorphism {
    fn source(&self) -> Chart;
    fn target_dim(&self) -> usize;
    fn forward(&self, x: &Vector) -> Result<Vector>;
    /// Inverse on the image; points off the surface are rejected.
    fn inverse(&self, p: &Vector) -> Result<Vector>;
    /// `target_dim × source.dim()` Jacobian of `forward`.
    fn jacobian(&self, x: &Vector) -> Result<Matrix>;

    /// `J_Φ(x) v`.
    fn pushforward_vector(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        let d = self.source().dim();
        if v.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: v.len(),
            });
        }
        Ok(self.jacobian(x)? * v)
    }
}

/// Standard embedding of the flat torus in ℝ³,
/// `((R + r cos x₂) cos x₁, (R + r cos x₂) sin x₁, r sin x₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusEmbedding {
    pub major: f64,
    pub minor: f64,
}

impl Default for TorusEmbedding {
    fn default() -> Self {
        Self {
            major: 2.0,
            minor: 1.0,
        }
    }
}

impl TorusEmbedding {
    /// Points farther than this from the surface are rejected by `inverse`.
    pub const SURFACE_TOLERANCE: f64 = 1e-6;

    pub fn new(major: f64, minor: f64) -> Result<Self> {
        if !(major > minor && minor > 0.0) {
            return Err(Error::Config(format!(
                "torus radii must satisfy R > r > 0, got R = {major}, r = {minor}"
            )));
        }
        Ok(Self { major, minor })
    }

    /// Signed residual of the implicit surface equation, in units of length:
    /// `√((√(p₁² + p₂²) − R)² + p₃²) − r`.
    pub fn surface_defect(&self, p: &Vector) -> f64 {
        let rho = p[0].hypot(p[1]);
        (rho - self.major).hypot(p[2]) - self.minor
    }

    /// Angles of the nearest surface point, without the on-surface check.
    pub fn project(&self, p: &Vector) -> Vector {
        let a1 = p[1].atan2(p[0]);
        let rho = p[0].hypot(p[1]);
        let a2 = p[2].atan2(rho - self.major);
        Vector::from_vec(vec![wrap_angle(a1), wrap_angle(a2)])
    }

    pub fn point(&self, x: &Vector) -> Vector3<f64> {
        let ring = self.major + self.minor * x[1].cos();
        Vector3::new(
            ring * x[0].cos(),
            ring * x[0].sin(),
            self.minor * x[1].sin(),
        )
    }
}

impl Diffeomorphism for TorusEmbedding {
    fn source(&self) -> Chart {
        Chart::FlatTorus
    }

    fn target_dim(&self) -> usize {
        3
    }

    fn forward(&self, x: &Vector) -> Result<Vector> {
        Chart::FlatTorus.check(x)?;
        let p = self.point(x);
        Ok(Vector::from_column_slice(p.as_slice()))
    }

    fn inverse(&self, p: &Vector) -> Result<Vector> {
        if p.len() != 3 {
            return Err(Error::Dimension {
                expected: 3,
                got: p.len(),
            });
        }
        let defect = self.surface_defect(p);
        if !(defect.abs() <= Self::SURFACE_TOLERANCE) {
            return Err(Error::Domain(format!(
                "point {:?} is {defect:e} off the embedded torus",
                p.as_slice()
            )));
        }
        Ok(self.project(p))
    }

    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        Chart::FlatTorus.check(x)?;
        let (s1, c1) = x[0].sin_cos();
        let (s2, c2) = x[1].sin_cos();
        let ring = self.major + self.minor * c2;
        let r = self.minor;
        Ok(Matrix::from_row_slice(
            3,
            2,
            &[
                -ring * s1,
                -r * s2 * c1,
                ring * c1,
                -r * s2 * s1,
                0.0,
                r * c2,
            ],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn metric_examples() {
        assert_eq!(
            Chart::FlatTorus.metric(&v(1.0, 2.0)).unwrap(),
            Matrix::identity(2, 2)
        );
        assert_eq!(
            Chart::PoincareDisk.metric(&v(0.0, 0.0)).unwrap(),
            Matrix::identity(2, 2) * 4.0
        );
        let g = Chart::PoincareDisk.metric(&v(0.5, 0.0)).unwrap();
        assert!((g[(0, 0)] - 4.0 / 0.5625).abs() < 1e-12);
        assert!((g[(0, 0)] - 7.1111).abs() < 1e-4);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn disk_domain_errors() {
        assert!(matches!(
            Chart::PoincareDisk.metric(&v(1.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(Chart::PoincareDisk.christoffel(&v(0.8, 0.7)).is_err());
        assert!(Chart::PoincareDisk
            .dist(&v(0.0, 0.0), &v(0.0, 1.2))
            .is_err());
        assert!(matches!(
            Chart::FlatTorus.metric(&Vector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn christoffel_vanish_where_expected() {
        assert!(Chart::FlatTorus
            .christoffel(&v(1.3, 4.0))
            .unwrap()
            .is_zero());
        assert!(Chart::PoincareDisk
            .christoffel(&v(0.0, 0.0))
            .unwrap()
            .is_zero());
    }

    // Γ^k_{ij} = ½ g^{kl} (∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij}) with central
    // differences of metric().
    fn finite_difference_christoffel(chart: Chart, x: &Vector) -> Christoffel {
        let d = chart.dim();
        let h = 1e-6;
        let dg: Vec<Matrix> = (0..d)
            .map(|a| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += h;
                xm[a] -= h;
                (chart.metric(&xp).unwrap() - chart.metric(&xm).unwrap()) / (2.0 * h)
            })
            .collect();
        let ginv = chart.inverse_metric(x).unwrap();
        let mut out = Christoffel::zeros(d);
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for l in 0..d {
                        s += 0.5 * ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    out.set(k, i, j, s);
                }
            }
        }
        out
    }

    #[test]
    fn disk_christoffel_matches_metric_derivatives() {
        for x in [v(0.5, 0.0), v(-0.3, 0.62), v(0.1, -0.2)] {
            let exact = Chart::PoincareDisk.christoffel(&x).unwrap();
            let fd = finite_difference_christoffel(Chart::PoincareDisk, &x);
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((exact.get(k, i, j) - fd.get(k, i, j)).abs() < 1e-5);
                        assert_eq!(exact.get(k, i, j), exact.get(k, j, i));
                    }
                }
            }
        }
    }

    #[test]
    fn distance_examples() {
        let d = Chart::FlatTorus.dist(&v(0.0, 0.0), &v(PI, 0.0)).unwrap();
        assert!((d - PI).abs() < 1e-15);
        assert_eq!(
            Chart::PoincareDisk
                .dist(&v(0.0, 0.0), &v(0.0, 0.0))
                .unwrap(),
            0.0
        );
        let d = Chart::PoincareDisk
            .dist(&v(0.0, 0.0), &v(0.6, 0.0))
            .unwrap();
        assert!((d - 4f64.ln()).abs() < 1e-12);
        assert!((d - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn disk_distance_gradient_matches_finite_differences() {
        let x = v(0.2, -0.4);
        let y = v(-0.5, 0.3);
        let g = Chart::PoincareDisk.grad_dist(&x, &y).unwrap();
        let h = 1e-6;
        for a in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += h;
            xm[a] -= h;
            let fd = (Chart::PoincareDisk.dist(&xp, &y).unwrap()
                - Chart::PoincareDisk.dist(&xm, &y).unwrap())
                / (2.0 * h);
            assert!((g[a] - fd).abs() < 1e-8);
        }
        // unit Riemannian norm
        let s = Chart::PoincareDisk.metric_scale(&x).unwrap();
        assert!((g.norm_squared() / s - 1.0).abs() < 1e-12);
    }

    fn rotation(angle: f64) -> Matrix {
        let (s, c) = angle.sin_cos();
        Matrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    #[test]
    fn disk_geometry_is_rotation_equivariant() {
        let x = v(0.31, -0.45);
        for angle in [0.3, 1.7, -2.4] {
            let r = rotation(angle);
            let rx = &r * &x;
            let g = Chart::PoincareDisk.metric(&x).unwrap();
            let grx = Chart::PoincareDisk.metric(&rx).unwrap();
            assert!((grx - &r * g * r.transpose()).amax() < 1e-10);
            // Γ transforms as a (1,2)-tensor under the linear map r.
            let gam = Chart::PoincareDisk.christoffel(&x).unwrap();
            let gam_r = Chart::PoincareDisk.christoffel(&rx).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut s = 0.0;
                        for a in 0..2 {
                            for b in 0..2 {
                                for c in 0..2 {
                                    s += r[(k, a)] * gam.get(a, b, c) * r[(i, b)] * r[(j, c)];
                                }
                            }
                        }
                        assert!((gam_r.get(k, i, j) - s).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn embedding_examples() {
        let e = TorusEmbedding::default();
        let p = e.forward(&v(0.0, 0.0)).unwrap();
        assert!((p - Vector::from_vec(vec![3.0, 0.0, 0.0])).amax() < 1e-15);
        let p = e.forward(&v(PI, 0.0)).unwrap();
        assert!((p - Vector::from_vec(vec![-3.0, 0.0, 0.0])).amax() < 1e-15);
        assert!(e.inverse(&Vector::from_vec(vec![3.0, 0.0, 0.1])).is_err());
        assert!(e.inverse(&Vector::from_vec(vec![3.0, 0.0, 1e-8])).is_ok());
    }

    #[test]
    fn pushforward_vector_examples() {
        let e = TorusEmbedding::default();
        let x = v(0.7, 2.1);
        assert_eq!(
            e.pushforward_vector(&x, &Vector::zeros(2)).unwrap().amax(),
            0.0
        );
        let col = e.pushforward_vector(&x, &v(1.0, 0.0)).unwrap();
        assert_eq!(col, e.jacobian(&x).unwrap().column(0).into_owned());
        assert!(matches!(
            e.pushforward_vector(&x, &Vector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn torus_distance_is_period_invariant(
            a in 0.0..TAU, b in 0.0..TAU, c in 0.0..TAU, d in 0.0..TAU,
            k in -2i32..3, l in -2i32..3,
        ) {
            let x = v(a, b);
            let y = v(c, d);
            let base = Chart::FlatTorus.dist(&x, &y).unwrap();
            let shifted = v(a + f64::from(k) * TAU, b + f64::from(l) * TAU);
            let other = Chart::FlatTorus.dist(&shifted, &y).unwrap();
            prop_assert!((base - other).abs() < 1e-12);
            prop_assert!((base - Chart::FlatTorus.dist(&y, &x).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn triangle_inequality(
            p in proptest::array::uniform6(-0.69f64..0.69),
            torus in any::<bool>(),
        ) {
            let (chart, scale) = if torus { (Chart::FlatTorus, 9.0) } else { (Chart::PoincareDisk, 1.0) };
            let pt = |a: f64, b: f64| chart.canonicalize(&v(a * scale, b * scale));
            let (x, y, z) = (pt(p[0], p[1]), pt(p[2], p[3]), pt(p[4], p[5]));
            let dxz = chart.dist(&x, &z).unwrap();
            let dxy = chart.dist(&x, &y).unwrap();
            let dyz = chart.dist(&y, &z).unwrap();
            prop_assert!(dxz <= dxy + dyz + 1e-12);
            prop_assert!(dxy >= 0.0);
        }

        #[test]
        fn embedding_round_trip_and_jacobian(a in 0.0..TAU, b in 0.0..TAU) {
            let e = TorusEmbedding::default();
            let x = v(a, b);
            let p = e.forward(&x).unwrap();
            prop_assert!(e.surface_defect(&p).abs() < 1e-12);
            let back = e.inverse(&p).unwrap();
            prop_assert!(Chart::FlatTorus.displacement(&x, &back).amax() < 1e-12);
            let j = e.jacobian(&x).unwrap();
            let h = 1e-6;
            for c in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (e.point(&xp) - e.point(&xm)) / (2.0 * h);
                let col = j.column(c);
                let rel = (Vector3::new(col[0], col[1], col[2]) - fd).norm() / fd.norm();
                prop_assert!(rel < 1e-6);
            }
        }
    }
}
