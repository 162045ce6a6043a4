//! Guided processes: the bridge proposal obtained by adding the horizontal
//! gradient of `ln g` to the drift, and its likelihood-ratio weight
//! `Ψ = exp ∫₀ᵀ V(ln g)(s, X_s) ds` against the true bridge.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::frame_bundle::{self, quantize, DriverPath, FramePoint, HorizontalPath};
use crate::geometry::{Chart, Diffeomorphism, TorusEmbedding};
use crate::heat_kernel::GuidingFunction;
use crate::{Error, Matrix, Result, Vector};

/// A named vector field on a chart, used as a basis element `φ_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldBasis {
    /// `(1, 0)`: rotation along the first torus angle.
    Toroidal,
    /// `(0, 1)`: rotation along the second torus angle.
    Poloidal,
    /// `scale · x`. On the disk, `scale = −20` pulls towards the centre and
    /// `scale = 1` pushes towards the boundary.
    Linear { scale: f64 },
    /// `(amplitude · (1 − |x|²)², 0)`, pointing east with conformal decay.
    East { amplitude: f64 },
}

impl FieldBasis {
    pub fn eval(&self, x: &Vector) -> Vector {
        match *self {
            FieldBasis::Toroidal => Vector::from_vec(vec![1.0, 0.0]),
            FieldBasis::Poloidal => Vector::from_vec(vec![0.0, 1.0]),
            FieldBasis::Linear { scale } => x * scale,
            FieldBasis::East { amplitude } => {
                let s = 1.0 - x.norm_squared();
                Vector::from_vec(vec![amplitude * s * s, 0.0])
            }
        }
    }

    /// Parses `toroidal`, `poloidal`, `east`, `linear(<scale>)`,
    /// `east(<amplitude>)` and the disk presets `v1`, `v2`, `v3`.
    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim();
        let arg = |prefix: &str| -> Option<f64> {
            name.strip_prefix(prefix)?
                .strip_prefix('(')?
                .strip_suffix(')')?
                .trim()
                .parse()
                .ok()
        };
        match name {
            "toroidal" | "phi1" => Some(FieldBasis::Toroidal),
            "poloidal" | "phi2" => Some(FieldBasis::Poloidal),
            "east" => Some(FieldBasis::East { amplitude: 1.0 }),
            "v1" => Some(FieldBasis::Linear { scale: -20.0 }),
            "v2" => Some(FieldBasis::Linear { scale: 1.0 }),
            "v3" => Some(FieldBasis::East { amplitude: 5.0 }),
            _ => arg("linear")
                .map(|scale| FieldBasis::Linear { scale })
                .or_else(|| arg("east").map(|amplitude| FieldBasis::East { amplitude })),
        }
    }
}

/// `V_θ(x) = Σ_k θ_k φ_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSpec {
    basis: Vec<FieldBasis>,
    theta: Vec<f64>,
}

impl VectorFieldSpec {
    pub fn new(basis: Vec<FieldBasis>, theta: Vec<f64>) -> Result<Self> {
        if basis.len() != theta.len() {
            return Err(Error::Dimension {
                expected: basis.len(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config(
                "vector field coefficients must be finite".into(),
            ));
        }
        Ok(Self { basis, theta })
    }

    /// The zero field (`θ = 0`) over the given basis.
    pub fn zero(basis: Vec<FieldBasis>) -> Self {
        let theta = vec![0.0; basis.len()];
        Self { basis, theta }
    }

    pub fn basis(&self) -> &[FieldBasis] {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        Self::new(self.basis.clone(), theta.to_vec())
    }

    pub fn is_zero(&self) -> bool {
        self.theta.iter().all(|&t| t == 0.0)
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(x.len());
        for (phi, &th) in self.basis.iter().zip(&self.theta) {
            if th != 0.0 {
                out += phi.eval(x) * th;
            }
        }
        out
    }
}

/// Monotone reparameterisations of `[0, T]` that refine the grid near `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeChange {
    Uniform,
    /// `t ↦ t (1.7 − 0.7 t/T)`.
    TorusTilt,
    /// `t ↦ T u (2 − u)` with `u = t/T`.
    DiskQuadratic,
}

impl TimeChange {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim() {
            "uniform" => Some(Self::Uniform),
            "torus_tilt" => Some(Self::TorusTilt),
            "disk_quadratic" => Some(Self::DiskQuadratic),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::TorusTilt => "torus_tilt",
            Self::DiskQuadratic => "disk_quadratic",
        }
    }

    pub fn apply(&self, t: f64, horizon: f64) -> f64 {
        match self {
            Self::Uniform => t,
            Self::TorusTilt => t * (1.7 - 0.7 * t / horizon),
            Self::DiskQuadratic => {
                let u = t / horizon;
                horizon * u * (2.0 - u)
            }
        }
    }
}

/// Uniform grid of step `mesh` on `[0, T]` (rounded up to a whole number of
/// steps) mapped through `scheme`. Endpoints are exactly `0` and `T`.
pub fn time_grid(horizon: f64, mesh: f64, scheme: TimeChange) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) || !(mesh > 0.0) {
        return Err(Error::Config(format!(
            "time grid needs T > 0 and mesh > 0, got T = {horizon}, mesh = {mesh}"
        )));
    }
    let n = ((horizon / mesh) - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..=n)
        .map(|i| scheme.apply(horizon * i as f64 / n as f64, horizon))
        .collect();
    times[0] = 0.0;
    times[n] = horizon;
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(format!(
            "time change {} is not strictly increasing on this grid",
            scheme.name()
        )));
    }
    Ok(times)
}

/// Frame-coordinate drift and the weight integrand at `(t, u)`:
/// `(ν⁻¹ (V(x) + G⁻¹ ∂ ln g), ⟨V(x), ∂ ln g⟩)`.
fn drift_and_rate(
    chart: Chart,
    vf: &VectorFieldSpec,
    gf: &GuidingFunction,
    t: f64,
    u: &FramePoint,
) -> Result<(Vector, f64)> {
    let grad = gf.grad_log_g(t, &u.x)?;
    let v = vf.eval(&u.x);
    let rate = v.dot(&grad);
    let raised = grad / chart.metric_scale(&u.x)?;
    let drift = u.to_frame_coordinates(&(v + raised))?;
    if !rate.is_finite() || drift.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric(format!("guiding term overflow at t = {t}")));
    }
    Ok((drift, rate))
}

/// Guided drift in frame coordinates, `ν⁻¹ (V_θ(x) + G(x)⁻¹ ∂ₓ ln g(t, x))`.
pub fn guided_drift(
    chart: Chart,
    vf: &VectorFieldSpec,
    gf: &GuidingFunction,
    t: f64,
    u: &FramePoint,
) -> Result<Vector> {
    drift_and_rate(chart, vf, gf, t, u).map(|(d, _)| d)
}

/// A guided path with its accumulated log-weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedSolution {
    pub chart: Chart,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub frames: HorizontalPath,
    /// `ln Ψ` by left-point quadrature over every grid interval.
    pub log_psi: f64,
    /// Running value of `ln Ψ` at each grid point.
    pub cumulative_log_psi: Vec<f64>,
    pub driver: DriverPath,
}

impl GuidedSolution {
    fn assemble(chart: Chart, frames: HorizontalPath, driver: DriverPath, rates: &[f64]) -> Self {
        let mut cumulative = Vec::with_capacity(frames.times.len());
        let mut acc = 0.0;
        cumulative.push(acc);
        for (w, r) in frames.times.windows(2).zip(rates) {
            acc += r * (w[1] - w[0]);
            cumulative.push(acc);
        }
        Self {
            chart,
            times: frames.times.clone(),
            states: frames.base_points(),
            frames,
            log_psi: acc,
            cumulative_log_psi: cumulative,
            driver,
        }
    }

    pub fn terminal(&self) -> &Vector {
        self.states.last().expect("non-empty path")
    }

    /// Geodesic distance between the last grid point and `target`.
    pub fn endpoint_error(&self, target: &Vector) -> Result<f64> {
        self.chart.dist(self.terminal(), target)
    }

    /// State at the grid point closest to time `t`.
    pub fn state_at(&self, t: f64) -> &Vector {
        let idx = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .expect("non-empty path");
        &self.states[idx]
    }
}

fn check_horizon(z: &DriverPath, gf: &GuidingFunction) -> Result<()> {
    let (a, b) = (z.horizon(), gf.horizon());
    if (a - b).abs() > 1e-12 * b.max(1.0) {
        return Err(Error::Config(format!(
            "driver grid ends at {a} but the guiding horizon is {b}"
        )));
    }
    Ok(())
}

/// The map `GP(u₀, Z)`: develops `z` under the guided drift and accumulates
/// `ln Ψ`. The drift of the final interval is evaluated at its left endpoint,
/// and the last state is not snapped onto the target.
pub fn simulate_guided(
    chart: Chart,
    vf: &VectorFieldSpec,
    gf: &GuidingFunction,
    u0: &FramePoint,
    z: &DriverPath,
) -> Result<GuidedSolution> {
    check_horizon(z, gf)?;
    let mut rates = Vec::with_capacity(z.steps());
    let frames = frame_bundle::develop(chart, u0, z, |_: usize, t: f64, u: &FramePoint| {
        let (drift, rate) = drift_and_rate(chart, vf, gf, t, u)?;
        rates.push(rate);
        Ok(drift)
    })?;
    Ok(GuidedSolution::assemble(chart, frames, z.clone(), &rates))
}

/// Anti-develops a horizontal path under the guided drift of `vf`, returning
/// the solution whose driver reproduces `path` exactly and whose weight is
/// recomputed for `vf`.
pub fn reanchor(
    chart: Chart,
    vf: &VectorFieldSpec,
    gf: &GuidingFunction,
    path: &HorizontalPath,
) -> Result<GuidedSolution> {
    let mut rates = Vec::with_capacity(path.times.len());
    let driver = frame_bundle::antidevelop(chart, path, |_: usize, t: f64, u: &FramePoint| {
        let (drift, rate) = drift_and_rate(chart, vf, gf, t, u)?;
        rates.push(rate);
        Ok(drift)
    })?;
    check_horizon(&driver, gf)?;
    Ok(GuidedSolution::assemble(
        chart,
        path.clone(),
        driver,
        &rates,
    ))
}

/// `ln Ψ` recomputed from the stored path.
pub fn recompute_log_psi(
    vf: &VectorFieldSpec,
    gf: &GuidingFunction,
    sol: &GuidedSolution,
) -> Result<f64> {
    let mut acc = 0.0;
    for (j, w) in sol.times.windows(2).enumerate() {
        let x = &sol.states[j];
        acc += vf.eval(x).dot(&gf.grad_log_g(w[0], x)?) * (w[1] - w[0]);
    }
    Ok(acc)
}

/// Monte Carlo estimate of the transition density `p(0, x₀; T, x_T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub value: f64,
    pub std_error: f64,
    pub paths: usize,
}

/// `p(0, x₀; T, x_T) = g(0, x₀) E^g Ψ`, averaged over one guided path per
/// seed. Paths run in parallel on the rayon pool.
pub fn transition_density_estimate(
    chart: Chart,
    vf: &VectorFieldSpec,
    gf: &GuidingFunction,
    u0: &FramePoint,
    times: &[f64],
    seeds: &[u64],
) -> Result<DensityEstimate> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!(
            "density estimate needs at least 2 paths, got {}",
            seeds.len()
        )));
    }
    let log_g0 = gf.log_g(0.0, &u0.x)?;
    // Each path owns its generator, so the parallel map is deterministic.
    let log_psi = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = DriverPath::wiener(times.to_vec(), chart.dim(), &mut rng)?;
            Ok(simulate_guided(chart, vf, gf, u0, &z)?.log_psi)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = log_psi.len() as f64;
    let shift = log_psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_psi.iter().map(|l| (l - shift).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = (log_g0 + shift).exp();
    Ok(DensityEstimate {
        value: scale * mean,
        std_error: scale * (var / n).sqrt(),
        paths: log_psi.len(),
    })
}

/// A guided path carried to the target manifold of a diffeomorphism.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedPath {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    /// Weight of the mapped path; equal to the source weight.
    pub log_psi: f64,
}

/// Pointwise image `Φ(X_t)`. The weight is unchanged because
/// `Ψ_{Φ*g}(Y) = Ψ_g(Φ⁻¹ Y)`.
pub fn pushforward_guided<D: Diffeomorphism + ?Sized>(
    diffeo: &D,
    sol: &GuidedSolution,
) -> Result<MappedPath> {
    if diffeo.source() != sol.chart {
        return Err(Error::Config(format!(
            "diffeomorphism is defined on {}, path lives on {}",
            diffeo.source().name(),
            sol.chart.name()
        )));
    }
    let points = sol
        .states
        .iter()
        .map(|x| diffeo.forward(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(MappedPath {
        times: sol.times.clone(),
        points,
        log_psi: sol.log_psi,
    })
}

/// Integrates the pushed-forward guided SDE directly in ℝ³ on the embedded
/// torus: the state `y` moves along the fields `J_Φ(Φ⁻¹ y) νᵢ` with the same
/// Euler–Heun scheme and lattice increments as [`simulate_guided`]. The
/// flat-torus frame is parallel, hence constant, so only `y` is integrated.
pub fn simulate_embedded(
    embedding: &TorusEmbedding,
    vf: &VectorFieldSpec,
    gf: &GuidingFunction,
    u0: &FramePoint,
    z: &DriverPath,
) -> Result<Vec<Vector>> {
    let chart = Chart::FlatTorus;
    check_horizon(z, gf)?;
    let frame_fields = |y: &Vector| -> Result<(Vector, Matrix)> {
        let x = embedding.project(y);
        let e = embedding.jacobian(&x)? * &u0.nu;
        Ok((x, e))
    };
    let mut y = embedding.forward(&u0.x)?;
    let mut out = Vec::with_capacity(z.times().len());
    out.push(y.clone());
    for (j, (w, dzeta)) in z.times().windows(2).zip(z.increments()).enumerate() {
        let step = || -> Result<Vector> {
            let (x, e0) = frame_fields(&y)?;
            let u = FramePoint {
                x,
                nu: u0.nu.clone(),
            };
            let a = guided_drift(chart, vf, gf, w[0], &u)?;
            let dz = (a * (w[1] - w[0])).map(quantize) + dzeta;
            let predicted = &y + &e0 * &dz;
            let (_, e1) = frame_fields(&predicted)?;
            Ok(&y + (e0 + e1) * &dz * 0.5)
        };
        y = step().map_err(|e| Error::at_step(j, e))?;
        out.push(y.clone());
    }
    Ok(out)
}
