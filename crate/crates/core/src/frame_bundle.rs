//! Frame-bundle points, horizontal vector fields, and discrete stochastic
//! (anti-)development.
//!
//! A horizontal path is obtained from an ℝᵈ-valued driver `Z` by the
//! Stratonovich SDE `dU = H_i(U) ∘ (a_i(t, U) dt + dZ^i)`, where `a` is a drift
//! expressed in frame coordinates. The SDE is integrated with an Euler–Heun
//! predictor–corrector. The drift is evaluated once per step at the left
//! endpoint, so the combined frame-coordinate increment `dz = a Δt + ΔZ` is
//! shared by predictor and corrector.
//!
//! Increments live on a dyadic lattice of spacing [`INCREMENT_QUANTUM`]. Sums
//! and differences of lattice values are then exact in floating point, and
//! [`antidevelop`] can recover `dz` from consecutive frames by solving the
//! corrector equation and snapping to the lattice. As a consequence
//! `antidevelop ∘ develop` and `develop ∘ antidevelop` are identities bit for
//! bit.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::Chart;
use crate::{Error, Matrix, Result, Vector};

/// Spacing of the increment lattice, `2⁻⁴⁰ ≈ 9.1e−13`.
pub const INCREMENT_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Frames with `|det ν|` below this are treated as degenerate.
pub const MIN_FRAME_DET: f64 = 1e-12;

/// Rounds to the nearest point of the increment lattice.
#[inline]
pub fn quantize(v: f64) -> f64 {
    (v * (1u64 << 40) as f64).round() * INCREMENT_QUANTUM
}

fn quantize_vector(v: &Vector) -> Vector {
    v.map(quantize)
}

/// A point `u = (x, ν)` of the frame bundle. Column `i` of `nu` is the frame
/// vector `νᵢ ∈ T_x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePoint {
    pub x: Vector,
    pub nu: Matrix,
}

impl FramePoint {
    pub fn new(chart: Chart, x: Vector, nu: Matrix) -> Result<Self> {
        chart.check(&x)?;
        let d = chart.dim();
        if nu.nrows() != d || nu.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: nu.nrows().max(nu.ncols()),
            });
        }
        let det = nu.determinant();
        if !(det.abs() > MIN_FRAME_DET) {
            return Err(Error::Domain(format!("degenerate frame, det = {det:e}")));
        }
        Ok(Self {
            x: chart.canonicalize(&x),
            nu,
        })
    }

    /// The orthonormal frame `G(x)^{-1/2}` at `x`.
    pub fn orthonormal(chart: Chart, x: Vector) -> Result<Self> {
        let s = chart.metric_scale(&x)?;
        let d = chart.dim();
        Self::new(chart, x, Matrix::identity(d, d) / s.sqrt())
    }

    /// `max |νᵀ G ν − I|`, zero for frames in the orthonormal bundle.
    pub fn orthonormality_defect(&self, chart: Chart) -> Result<f64> {
        let g = chart.metric(&self.x)?;
        let d = chart.dim();
        Ok((self.nu.transpose() * g * &self.nu - Matrix::identity(d, d)).amax())
    }

    /// Solves `ν a = v`, i.e. expresses a tangent vector in frame coordinates.
    pub fn to_frame_coordinates(&self, v: &Vector) -> Result<Vector> {
        self.nu
            .clone()
            .lu()
            .solve(v)
            .ok_or_else(|| Error::Numeric("singular frame".into()))
    }
}

/// A time grid with one ℝᵈ increment per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    times: Vec<f64>,
    increments: Vec<Vector>,
}

impl DriverPath {
    pub fn new(times: Vec<f64>, increments: Vec<Vector>) -> Result<Self> {
        check_grid(&times)?;
        if increments.len() + 1 != times.len() {
            return Err(Error::Config(format!(
                "{} increments for a grid with {} intervals",
                increments.len(),
                times.len() - 1
            )));
        }
        if let Some(first) = increments.first() {
            let d = first.len();
            if let Some(bad) = increments.iter().find(|z| z.len() != d) {
                return Err(Error::Dimension {
                    expected: d,
                    got: bad.len(),
                });
            }
        }
        Ok(Self {
            times,
            increments: increments.iter().map(quantize_vector).collect(),
        })
    }

    pub fn zeros(times: Vec<f64>, dim: usize) -> Result<Self> {
        let n = times.len().saturating_sub(1);
        Self::new(times, vec![Vector::zeros(dim); n])
    }

    /// Brownian increments `√Δt · ξ` on the grid.
    pub fn wiener<R: Rng + ?Sized>(times: Vec<f64>, dim: usize, rng: &mut R) -> Result<Self> {
        check_grid(&times)?;
        let increments = times
            .windows(2)
            .map(|w| {
                let s = (w[1] - w[0]).sqrt();
                Vector::from_fn(dim, |_, _| s * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        Self::new(times, increments)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn increments(&self) -> &[Vector] {
        &self.increments
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid has at least two points")
    }

    /// Driver values `Z_{t_j}` with `Z_0 = 0`.
    pub fn cumulative(&self, dim: usize) -> Vec<Vector> {
        let mut acc = Vector::zeros(dim);
        let mut out = vec![acc.clone()];
        for dz in &self.increments {
            acc += dz;
            out.push(acc.clone());
        }
        out
    }

    /// Sums `factor` consecutive increments, keeping every `factor`-th grid
    /// point. Exact on the increment lattice.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.steps()
            )));
        }
        let times = self.times.iter().step_by(factor).copied().collect();
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().fold(Vector::zeros(c[0].len()), |acc, z| acc + z))
            .collect();
        Self::new(times, increments)
    }

    /// Preconditioned Crank–Nicolson mixture `λ Z + √(1 − λ²) W`.
    pub fn pcn_mix(&self, innovation: &DriverPath, lambda: f64) -> Result<Self> {
        if innovation.times != self.times {
            return Err(Error::Config(
                "pCN innovation lives on a different grid".into(),
            ));
        }
        let mu = (1.0 - lambda * lambda).sqrt();
        let increments = self
            .increments
            .iter()
            .zip(&innovation.increments)
            .map(|(z, w)| z * lambda + w * mu)
            .collect();
        Self::new(self.times.clone(), increments)
    }
}

pub(crate) fn check_grid(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Config("time grid needs at least two points".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Frames along a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalPath {
    pub times: Vec<f64>,
    pub frames: Vec<FramePoint>,
}

impl HorizontalPath {
    /// Base-point projection `π(U)`.
    pub fn base_points(&self) -> Vec<Vector> {
        self.frames.iter().map(|u| u.x.clone()).collect()
    }

    pub fn terminal(&self) -> &FramePoint {
        self.frames.last().expect("non-empty path")
    }
}

/// The horizontal field `H_i(u)` split into its base and frame components.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalField {
    /// `dx/dt`, equal to the frame vector `νᵢ`.
    pub base: Vector,
    /// `dν^k_m/dt = −ν^j_i ν^l_m Γ^k_{jl}(x)`.
    pub frame: Matrix,
}

/// Canonical horizontal vector fields `H_1(u), …, H_d(u)`.
pub fn horizontal_fields(chart: Chart, u: &FramePoint) -> Result<Vec<HorizontalField>> {
    let gamma = chart.christoffel(&u.x)?;
    let d = chart.dim();
    let flat = gamma.is_zero();
    Ok((0..d)
        .map(|i| {
            let base = u.nu.column(i).into_owned();
            let mut frame = Matrix::zeros(d, d);
            if !flat {
                for k in 0..d {
                    for m in 0..d {
                        let mut s = 0.0;
                        for j in 0..d {
                            for l in 0..d {
                                s += u.nu[(j, i)] * u.nu[(l, m)] * gamma.get(k, j, l);
                            }
                        }
                        frame[(k, m)] = -s;
                    }
                }
            }
            HorizontalField { base, frame }
        })
        .collect())
}

/// `Σᵢ H_i(u) cᵢ` as (base, frame) velocities.
fn combine(fields: &[HorizontalField], coeffs: &Vector) -> (Vector, Matrix) {
    let d = coeffs.len();
    let mut base = Vector::zeros(d);
    let mut frame = Matrix::zeros(d, d);
    for (f, &c) in fields.iter().zip(coeffs.iter()) {
        base += &f.base * c;
        frame += &f.frame * c;
    }
    (base, frame)
}

/// One Euler–Heun step driven by the frame-coordinate increment `dz`.
pub(crate) fn heun_step(chart: Chart, u: &FramePoint, dz: &Vector) -> Result<FramePoint> {
    let fields = horizontal_fields(chart, u)?;
    let (base0, frame0) = combine(&fields, dz);
    let predicted = FramePoint {
        x: &u.x + &base0,
        nu: &u.nu + &frame0,
    };
    chart.check(&predicted.x)?;
    let fields1 = horizontal_fields(chart, &predicted)?;
    let (base1, frame1) = combine(&fields1, dz);
    let x = &u.x + (base0 + base1) * 0.5;
    let nu = &u.nu + (frame0 + frame1) * 0.5;
    FramePoint::new(chart, x, nu)
}

/// Drift of the developed SDE in frame coordinates, evaluated at
/// `(step, t_step, U_step)`.
pub trait FrameDrift {
    fn eval(&mut self, step: usize, t: f64, u: &FramePoint) -> Result<Vector>;
}

impl<F> FrameDrift for F
where
    F: FnMut(usize, f64, &FramePoint) -> Result<Vector>,
{
    fn eval(&mut self, step: usize, t: f64, u: &FramePoint) -> Result<Vector> {
        self(step, t, u)
    }
}

/// Drift that is identically zero.
pub fn no_drift(dim: usize) -> impl FnMut(usize, f64, &FramePoint) -> Result<Vector> {
    move |_, _, _| Ok(Vector::zeros(dim))
}

fn drift_increment<D: FrameDrift>(
    drift: &mut D,
    step: usize,
    t: f64,
    dt: f64,
    u: &FramePoint,
    dim: usize,
) -> Result<Vector> {
    let a = drift.eval(step, t, u)?;
    if a.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: a.len(),
        });
    }
    let inc = quantize_vector(&(a * dt));
    if inc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite drift".into()));
    }
    Ok(inc)
}

/// Stochastic development of `z` from `u0` with the given frame drift.
pub fn develop<D: FrameDrift>(
    chart: Chart,
    u0: &FramePoint,
    z: &DriverPath,
    mut drift: D,
) -> Result<HorizontalPath> {
    let d = chart.dim();
    let mut frames = Vec::with_capacity(z.times.len());
    frames.push(u0.clone());
    for (j, (w, dzeta)) in z.times.windows(2).zip(&z.increments).enumerate() {
        let u = &frames[j];
        let dt = w[1] - w[0];
        let next = drift_increment(&mut drift, j, w[0], dt, u, d)
            .and_then(|a| heun_step(chart, u, &(a + dzeta)))
            .map_err(|e| Error::at_step(j, e))?;
        frames.push(next);
    }
    Ok(HorizontalPath {
        times: z.times.clone(),
        frames,
    })
}

/// Recovers the frame-coordinate increment that moves `u` to `next` under
/// [`heun_step`], by Newton iteration on the base-point corrector equation
/// `Δx = ν dz + ½ Σᵢₘ dzᵢ dzₘ F_i[:, m]`, followed by snapping to the lattice.
fn solve_step_increment(chart: Chart, u: &FramePoint, next: &FramePoint) -> Result<Vector> {
    let d = chart.dim();
    let target = chart.displacement(&u.x, &next.x);
    let fields = horizontal_fields(chart, u)?;
    let flat = fields.iter().all(|f| f.frame.iter().all(|&v| v == 0.0));
    let lu = u.nu.clone().lu();
    let mut dz = lu
        .solve(&target)
        .ok_or_else(|| Error::Numeric("singular frame".into()))?;
    if !flat {
        for _ in 0..50 {
            let mut residual = &u.nu * &dz - &target;
            let mut jac = u.nu.clone();
            for i in 0..d {
                for m in 0..d {
                    let pair = dz[i] * dz[m] * 0.5;
                    residual += fields[i].frame.column(m) * pair;
                    // ∂/∂dz_p of ½ dz_i dz_m F_i[:, m]
                    let col_i = fields[i].frame.column(m) * (0.5 * dz[m]);
                    let col_m = fields[i].frame.column(m) * (0.5 * dz[i]);
                    let mut ci = jac.column_mut(i);
                    ci += col_i;
                    let mut cm = jac.column_mut(m);
                    cm += col_m;
                }
            }
            let step = jac
                .lu()
                .solve(&residual)
                .ok_or_else(|| Error::Numeric("singular Newton system".into()))?;
            dz -= &step;
            if step.amax() <= 1e-17 * (1.0 + dz.amax()) {
                break;
            }
        }
    }
    Ok(quantize_vector(&dz))
}

/// Anti-development: the driver `Z` whose development under `drift` is
/// `path`. Exact inverse of [`develop`] on the increment lattice.
pub fn antidevelop<D: FrameDrift>(
    chart: Chart,
    path: &HorizontalPath,
    mut drift: D,
) -> Result<DriverPath> {
    check_grid(&path.times)?;
    if path.frames.len() != path.times.len() {
        return Err(Error::Config(format!(
            "{} frames on a grid of {} points",
            path.frames.len(),
            path.times.len()
        )));
    }
    let d = chart.dim();
    let mut increments = Vec::with_capacity(path.times.len() - 1);
    for (j, w) in path.times.windows(2).enumerate() {
        let u = &path.frames[j];
        let inc = solve_step_increment(chart, u, &path.frames[j + 1])
            .and_then(|dz| Ok(dz - drift_increment(&mut drift, j, w[0], w[1] - w[0], u, d)?))
            .map_err(|e| Error::at_step(j, e))?;
        increments.push(inc);
    }
    DriverPath::new(path.times.clone(), increments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    fn grid(n: usize, horizon: f64) -> Vec<f64> {
        (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
    }

    #[test]
    fn flat_fields_have_no_frame_velocity() {
        let u = FramePoint::new(Chart::FlatTorus, v(1.0, 2.0), Matrix::identity(2, 2)).unwrap();
        let h = horizontal_fields(Chart::FlatTorus, &u).unwrap();
        assert_eq!(h[0].base, v(1.0, 0.0));
        assert_eq!(h[1].base, v(0.0, 1.0));
        assert!(h.iter().all(|f| f.frame.amax() == 0.0));
    }

    #[test]
    fn disk_fields_match_explicit_expansion() {
        let chart = Chart::PoincareDisk;
        let x = v(0.5, 0.0);
        let u = FramePoint::orthonormal(chart, x.clone()).unwrap();
        let rot = Matrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let u = FramePoint::new(chart, x.clone(), &u.nu * rot).unwrap();
        let gamma = chart.christoffel(&x).unwrap();
        let h = horizontal_fields(chart, &u).unwrap();
        for (i, hi) in h.iter().enumerate() {
            assert_eq!(hi.base, u.nu.column(i).into_owned());
            for k in 0..2 {
                for m in 0..2 {
                    let mut expect = 0.0;
                    for j in 0..2 {
                        for l in 0..2 {
                            expect -= u.nu[(j, i)] * u.nu[(l, m)] * gamma.get(k, j, l);
                        }
                    }
                    assert!((hi.frame[(k, m)] - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_input_gives_constant_path() {
        for chart in [Chart::FlatTorus, Chart::PoincareDisk] {
            let u0 = FramePoint::orthonormal(chart, v(0.3, 0.2)).unwrap();
            let z = DriverPath::zeros(grid(20, 1.0), 2).unwrap();
            let path = develop(chart, &u0, &z, no_drift(2)).unwrap();
            assert!(path.frames.iter().all(|u| *u == u0));
            let back = antidevelop(chart, &path, no_drift(2)).unwrap();
            assert!(back.increments().iter().all(|dz| dz.amax() == 0.0));
        }
    }

    #[test]
    fn flat_development_is_wrapped_cumulative_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DriverPath::wiener(grid(500, 4.0), 2, &mut rng).unwrap();
        let u0 = FramePoint::new(Chart::FlatTorus, v(6.0, 0.1), Matrix::identity(2, 2)).unwrap();
        let path = develop(Chart::FlatTorus, &u0, &z, no_drift(2)).unwrap();
        for (u, zc) in path.frames.iter().zip(z.cumulative(2)) {
            let expect = Chart::FlatTorus.canonicalize(&(&u0.x + zc));
            assert!(Chart::FlatTorus.displacement(&expect, &u.x).amax() < 1e-12);
            assert!(u.x.iter().all(|&c| (0.0..TAU).contains(&c)));
            assert_eq!(u.nu, Matrix::identity(2, 2));
        }
    }

    #[test]
    fn disk_development_stays_nearly_orthonormal() {
        let chart = Chart::PoincareDisk;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u0 = FramePoint::orthonormal(chart, v(0.1, -0.2)).unwrap();
        let z = DriverPath::wiener(grid(1000, 1.0), 2, &mut rng).unwrap();
        let path = develop(chart, &u0, &z, no_drift(2)).unwrap();
        let worst = path
            .frames
            .iter()
            .map(|u| u.orthonormality_defect(chart).unwrap())
            .fold(0.0, f64::max);
        log::info!("orthonormality defect at mesh 1e-3: {worst:e}");
        assert!(path.terminal().orthonormality_defect(chart).unwrap() < 1e-2);
        assert!(worst < 0.05);
    }

    #[test]
    fn degenerate_and_escaping_paths_fail_with_step() {
        assert!(FramePoint::new(Chart::FlatTorus, v(0.0, 0.0), Matrix::zeros(2, 2)).is_err());
        let chart = Chart::PoincareDisk;
        let u0 = FramePoint::orthonormal(chart, v(0.9, 0.0)).unwrap();
        let inc = vec![v(0.0, 0.0), v(50.0, 0.0), v(0.0, 0.0)];
        let z = DriverPath::new(grid(3, 1.0), inc).unwrap();
        match develop(chart, &u0, &z, no_drift(2)) {
            Err(Error::Integration { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn coarsening_and_pcn_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = DriverPath::wiener(grid(8, 1.0), 2, &mut rng).unwrap();
        let c = z.coarsen(2).unwrap();
        assert_eq!(c.steps(), 4);
        assert_eq!(c.increments()[1], &z.increments()[2] + &z.increments()[3]);
        assert!(z.coarsen(3).is_err());
        let same = z.pcn_mix(&z, 0.0).unwrap();
        assert_eq!(same, z);
        let w = DriverPath::wiener(grid(8, 1.0), 2, &mut rng).unwrap();
        let near = z.pcn_mix(&w, 0.999_999).unwrap();
        let gap = near
            .increments()
            .iter()
            .zip(z.increments())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        assert!(gap < 1e-2);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(DriverPath::zeros(vec![0.0], 2).is_err());
        assert!(DriverPath::zeros(vec![0.0, 0.5, 0.5], 2).is_err());
        assert!(DriverPath::new(grid(2, 1.0), vec![v(0.0, 0.0)]).is_err());
    }

    mod round_trip {
        use super::*;
        use proptest::prelude::*;

        // Smooth, state-dependent frame drift.
        fn wobble(scale: f64) -> impl FnMut(usize, f64, &FramePoint) -> Result<Vector> {
            move |_, t, u| {
                Ok(v(
                    scale * (3.0 * u.x[1] + t).sin(),
                    scale * (u.x[0] * 2.0 - t).cos(),
                ))
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(50))]
            #[test]
            fn antidevelop_inverts_develop(
                seed in any::<u64>(),
                torus in any::<bool>(),
                scale in -3.0f64..3.0,
                a in -0.5f64..0.5,
                b in -0.5f64..0.5,
            ) {
                let chart = if torus { Chart::FlatTorus } else { Chart::PoincareDisk };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let z = DriverPath::wiener(grid(200, 0.5), 2, &mut rng).unwrap();
                let u0 = FramePoint::orthonormal(chart, chart.canonicalize(&v(a, b))).unwrap();
                let path = match develop(chart, &u0, &z, wobble(scale)) {
                    Ok(p) => p,
                    // occasional exits from the disk are legitimate
                    Err(Error::Integration { .. }) => return Ok(()),
                    Err(e) => panic!("{e}"),
                };
                let back = antidevelop(chart, &path, wobble(scale)).unwrap();
                prop_assert_eq!(&back, &z);
                let again = develop(chart, &u0, &back, wobble(scale)).unwrap();
                prop_assert_eq!(again, path);
            }
        }
    }
}
